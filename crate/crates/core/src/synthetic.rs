//! Synthetic QA records whose best agents are a fixed function of the
//! question's cue category.
//!
//! | cue      | agents that answer correctly |
//! |----------|------------------------------|
//! | person   | cot, mad                     |
//! | location | raw, sc                      |
//! | time     | react_reflect, summary       |
//!
//! Every other agent returns the same decoy, so an unweighted vote over the
//! full pool always picks the wrong answer.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{AgentAnswerRecord, AgentDesign, AgentPool, DatasetRecord};
use crate::extract::Cue;

const PEOPLE: [&str; 12] = [
    "Ada Holloway",
    "Bruno Castell",
    "Clara Voss",
    "Desmond Reyes",
    "Elena Marsh",
    "Felix Grant",
    "Greta Lind",
    "Hugo Sterling",
    "Iris Navarro",
    "Jonas Whitfield",
    "Katya Orlov",
    "Leon Duarte",
];
const PLACES: [&str; 12] = [
    "Lisbon",
    "Tallinn",
    "Valparaiso",
    "Kyoto",
    "Winnipeg",
    "Marseille",
    "Bergen",
    "Cork",
    "Hobart",
    "Tucson",
    "Gdansk",
    "Porto",
];
const WORK_HEADS: [&str; 12] = [
    "Northern Lantern",
    "Silver Kettle",
    "Harbor Clock",
    "Amber Road",
    "Copper Finch",
    "Quiet Meadow",
    "Iron Bridge",
    "Red Willow",
    "Blue Harbor",
    "Granite Peak",
    "Velvet Comet",
    "Tidewater",
];
const WORK_KINDS: [&str; 8] = [
    "Press",
    "Studio",
    "Guild",
    "Theatre",
    "Records",
    "Observatory",
    "Gazette",
    "Orchestra",
];
const DECOY: &str = "Unknown Committee";

pub const CATEGORIES: [Cue; 3] = [Cue::Person, Cue::Location, Cue::Time];

/// Designs that know the answer for a cue category.
pub fn good_designs(cue: Cue) -> [AgentDesign; 2] {
    match cue {
        Cue::Person => [AgentDesign::Cot, AgentDesign::Mad],
        Cue::Location => [AgentDesign::Raw, AgentDesign::Sc],
        _ => [AgentDesign::ReactReflect, AgentDesign::Summary],
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub records: Vec<DatasetRecord>,
    pub cache: Vec<AgentAnswerRecord>,
}

/// `n` records named `<prefix>-<i>`, category `i % 3`.
pub fn generate(n: usize, seed: u64, prefix: &str, pool: &AgentPool) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut cache = Vec::with_capacity(n * pool.len());
    // Distinct work names keep questions unique across records.
    let mut works: Vec<String> = WORK_HEADS
        .iter()
        .flat_map(|h| WORK_KINDS.iter().map(move |k| format!("{h} {k}")))
        .collect();
    works.shuffle(&mut rng);
    for i in 0..n {
        let cue = CATEGORIES[i % CATEGORIES.len()];
        let person = *PEOPLE.choose(&mut rng).expect("non-empty");
        let place = *PLACES.choose(&mut rng).expect("non-empty");
        let work = match i / works.len() {
            0 => works[i].clone(),
            round => format!("{} {}", works[i % works.len()], round + 1),
        };
        let year = 1900 + (i * 7 + seed as usize * 13) % 110;
        let context = format!(
            "{work} was founded by {person} in {year}. The first office of {work} opened in {place}. \
             Critics praised {person} for the early programme."
        );
        let (question, gold) = match cue {
            Cue::Person => (format!("Who founded {work}?"), person.to_string()),
            Cue::Location => (
                format!("Where did {work} open its first office?"),
                place.to_string(),
            ),
            _ => (format!("When was {work} founded?"), year.to_string()),
        };
        let id = format!("{prefix}-{i}");
        let good = good_designs(cue);
        for p in pool.profiles() {
            let answer = if good.contains(&p.design) {
                gold.clone()
            } else {
                DECOY.to_string()
            };
            cache.push(AgentAnswerRecord {
                record_id: id.clone(),
                agent_id: p.agent_id.clone(),
                answer,
                raw_output: None,
                f1: None,
                error: None,
            });
        }
        records.push(DatasetRecord {
            id,
            question,
            context,
            gold_answers: vec![gold],
            question_type: None,
            source_dataset: prefix.to_string(),
            pre_extracted: None,
        });
    }
    SyntheticSet { records, cache }
}

/// Dataset JSONL text for records.
pub fn dataset_jsonl(records: &[DatasetRecord]) -> String {
    records
        .iter()
        .map(|r| {
            let mut v = serde_json::json!({
                "id": r.id,
                "question": r.question,
                "context": r.context,
                "answers": r.gold_answers,
            });
            if let Some(t) = &r.question_type {
                v["type"] = serde_json::Value::String(t.clone());
            }
            v.to_string() + "\n"
        })
        .collect()
}

pub fn cache_jsonl(rows: &[AgentAnswerRecord]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::token_f1;
    use crate::extract::question_type_cues;

    #[test]
    fn law_holds_and_majority_fails() {
        let pool = AgentPool::default_pool();
        let set = generate(9, 1, "syn", &pool);
        assert_eq!(set.cache.len(), 9 * 24);
        for (i, r) in set.records.iter().enumerate() {
            let cue = CATEGORIES[i % 3];
            assert!(
                question_type_cues(&r.question).contains(&cue),
                "{}",
                r.question
            );
            let rows = &set.cache[i * 24..(i + 1) * 24];
            let right = rows
                .iter()
                .filter(|a| token_f1(&a.answer, &r.gold_answers) == 1.0)
                .count();
            assert_eq!(right, 8);
            assert!(rows
                .iter()
                .all(|a| token_f1(&a.answer, &r.gold_answers) == 0.0
                    || a.answer == r.gold_answers[0]));
        }
        let big = generate(200, 3, "syn", &pool);
        let questions: std::collections::BTreeSet<_> =
            big.records.iter().map(|r| &r.question).collect();
        assert_eq!(questions.len(), 200);
        let again = generate(9, 1, "syn", &pool);
        assert_eq!(dataset_jsonl(&again.records), dataset_jsonl(&set.records));
    }
}
