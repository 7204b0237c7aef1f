//! Dataset and agent-cache loading, the index-based split protocol, and the
//! join of records with per-agent cached answers.
//!
//! Every per-agent vector in the crate (targets, routing probabilities,
//! votes) is aligned to one global order: agent ids sorted lexicographically.
//! [`AgentPool`] owns that order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::prompts;
use crate::extract::{EntityMention, RelationTriple};
use crate::{Error, Result};

/// One QA instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    pub gold_answers: Vec<String>,
    pub question_type: Option<String>,
    pub source_dataset: String,
    /// Entities/triples shipped with the record (e.g. from an external
    /// parser). When present, rule-based extraction is skipped.
    pub pre_extracted: Option<PreExtracted>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreExtracted {
    pub entities: Vec<EntityMention>,
    #[serde(default)]
    pub triples: Vec<RelationTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentDesign {
    Raw,
    Cot,
    Sc,
    ReactReflect,
    Mad,
    Summary,
}

impl AgentDesign {
    pub const ALL: [AgentDesign; 6] = [
        AgentDesign::Raw,
        AgentDesign::Cot,
        AgentDesign::Sc,
        AgentDesign::ReactReflect,
        AgentDesign::Mad,
        AgentDesign::Summary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentDesign::Raw => "raw",
            AgentDesign::Cot => "cot",
            AgentDesign::Sc => "sc",
            AgentDesign::ReactReflect => "react_reflect",
            AgentDesign::Mad => "mad",
            AgentDesign::Summary => "summary",
        }
    }

    /// Short keyword list describing the strategy; used for lexical
    /// agent-entity linking and in the default description text.
    pub fn keywords(self) -> &'static str {
        match self {
            AgentDesign::Raw => "direct answer",
            AgentDesign::Cot => "chain of thought step-by-step reasoning",
            AgentDesign::Sc => "self-consistency sampled reasoning paths majority",
            AgentDesign::ReactReflect => "react reflection plan revise feedback",
            AgentDesign::Mad => "multi-agent debate debater judge claim evidence",
            AgentDesign::Summary => "multi-agent summary supporting signals agree",
        }
    }
}

impl fmt::Display for AgentDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentDesign::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown agent design {s:?}")))
    }
}

/// A (backbone, design) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    pub backbone: String,
    pub design: AgentDesign,
    pub description_text: String,
}

impl AgentProfile {
    pub fn new(backbone: &str, design: AgentDesign) -> Self {
        let description_text = format!(
            "{backbone} agent, {} strategy ({}). {}",
            design,
            design.keywords(),
            prompts::primary_system_prompt(design)
        );
        AgentProfile {
            agent_id: agent_id(backbone, design),
            backbone: backbone.to_string(),
            design,
            description_text,
        }
    }
}

pub fn agent_id(backbone: &str, design: AgentDesign) -> String {
    format!("BACKBONE::{backbone}::AGENT::{design}")
}

pub const DEFAULT_BACKBONES: [&str; 4] = [
    "gpt_oss_20b",
    "llama3_8b_lite",
    "mixtral_8x7b",
    "qwen2p5_7b_turbo",
];

/// The agent pool in canonical (lexicographic agent id) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPool {
    profiles: Vec<AgentProfile>,
}

impl AgentPool {
    pub fn new(mut profiles: Vec<AgentProfile>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::data("agent pool is empty"));
        }
        profiles.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
        for pair in profiles.windows(2) {
            if pair[0].agent_id == pair[1].agent_id {
                return Err(Error::data(format!(
                    "duplicate agent id {}",
                    pair[0].agent_id
                )));
            }
        }
        Ok(AgentPool { profiles })
    }

    /// 4 backbones x 6 designs.
    pub fn default_pool() -> Self {
        let profiles = DEFAULT_BACKBONES
            .iter()
            .flat_map(|b| {
                AgentDesign::ALL
                    .into_iter()
                    .map(move |d| AgentProfile::new(b, d))
            })
            .collect();
        AgentPool::new(profiles).expect("default pool has unique ids")
    }

    /// Loads profiles from a JSONL file (one `AgentProfile` object per line).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut profiles = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: AgentProfile =
                serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            profiles.push(p);
        }
        AgentPool::new(profiles)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[AgentProfile] {
        &self.profiles
    }

    pub fn ids(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.agent_id.clone()).collect()
    }

    pub fn index_of(&self, agent_id: &str) -> Option<usize> {
        self.profiles
            .binary_search_by(|p| p.agent_id.as_str().cmp(agent_id))
            .ok()
    }
}

/// One cached agent answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAnswerRecord {
    pub record_id: String,
    pub agent_id: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    /// Set when the harness gave up on this pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Half-open index intervals into the official train / validation files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_range: Range<usize>,
    pub val_range: Range<usize>,
    pub test_range: Range<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_range: 0..500,
            val_range: 0..100,
            test_range: 100..200,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let r = &self.val_range;
        let t = &self.test_range;
        if r.start < t.end && t.start < r.end {
            return Err(Error::Config(format!(
                "val range {r:?} overlaps test range {t:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    question: Option<String>,
    context: Option<String>,
    answers: Option<Vec<String>>,
    #[serde(rename = "type")]
    question_type: Option<String>,
    entities: Option<Vec<EntityMention>>,
    triples: Option<Vec<RelationTriple>>,
}

/// Parses dataset JSONL. Ids default to `<dataset>-<line index>` (0-based).
pub fn parse_dataset(text: &str, source_dataset: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let question = raw
            .question
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| Error::parse(lineno, "missing question"))?;
        let context = raw
            .context
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| Error::parse(lineno, "missing context"))?;
        let gold_answers = raw
            .answers
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::parse(lineno, "missing gold answers"))?;
        let id = raw.id.unwrap_or_else(|| format!("{source_dataset}-{idx}"));
        if !seen.insert(id.clone()) {
            return Err(Error::parse(lineno, format!("duplicate record id {id:?}")));
        }
        let pre_extracted = raw.entities.map(|entities| PreExtracted {
            entities,
            triples: raw.triples.unwrap_or_default(),
        });
        out.push(DatasetRecord {
            id,
            question,
            context,
            gold_answers,
            question_type: raw.question_type,
            source_dataset: source_dataset.to_string(),
            pre_extracted,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, source_dataset: &str) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, source_dataset)
}

pub struct Splits {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

fn slice_range(
    name: &str,
    records: &[DatasetRecord],
    range: &Range<usize>,
) -> Result<Vec<DatasetRecord>> {
    if records.len() < range.end {
        return Err(Error::data(format!(
            "{name} range needs {}, have {}",
            range.end,
            records.len()
        )));
    }
    Ok(records[range.clone()].to_vec())
}

/// Index-based, shuffle-free split selection.
pub fn make_splits(
    train_file_records: &[DatasetRecord],
    val_file_records: &[DatasetRecord],
    spec: &SplitSpec,
) -> Result<Splits> {
    spec.validate()?;
    Ok(Splits {
        train: slice_range("train", train_file_records, &spec.train_range)?,
        val: slice_range("val", val_file_records, &spec.val_range)?,
        test: slice_range("test", val_file_records, &spec.test_range)?,
    })
}

/// Cached answers keyed by (record id, agent id).
#[derive(Debug, Clone, Default)]
pub struct AgentCache {
    pub entries: BTreeMap<(String, String), AgentAnswerRecord>,
    pub duplicates: usize,
    pub warnings: Vec<String>,
}

impl AgentCache {
    pub fn get(&self, record_id: &str, agent_id: &str) -> Option<&AgentAnswerRecord> {
        self.entries
            .get(&(record_id.to_string(), agent_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct agent ids, sorted.
    pub fn agent_ids(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.keys().map(|(_, a)| a).collect();
        set.into_iter().cloned().collect()
    }
}

/// Parses cache JSONL. Later lines win on duplicate keys. With a pool,
/// agents outside it are kept and reported as "unknown agent".
pub fn parse_agent_cache(text: &str, pool: Option<&AgentPool>) -> Result<AgentCache> {
    let mut cache = AgentCache::default();
    let mut first_line: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut unknown = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AgentAnswerRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if let Some(f1) = rec.f1 {
            if !(0.0..=1.0).contains(&f1) {
                return Err(Error::parse(lineno, format!("f1 {f1} outside [0, 1]")));
            }
        }
        if let Some(pool) = pool {
            if pool.index_of(&rec.agent_id).is_none() && unknown.insert(rec.agent_id.clone()) {
                cache
                    .warnings
                    .push(format!("line {lineno}: unknown agent {}", rec.agent_id));
            }
        }
        let key = (rec.record_id.clone(), rec.agent_id.clone());
        if let Some(prev) = first_line.get(&key) {
            cache.duplicates += 1;
            let msg = format!(
                "line {lineno}: duplicate entry for ({}, {}) overrides line {prev}",
                key.0, key.1
            );
            tracing::warn!("{msg}");
            cache.warnings.push(msg);
        } else {
            first_line.insert(key.clone(), lineno);
        }
        cache.entries.insert(key, rec);
    }
    Ok(cache)
}

pub fn load_agent_cache(path: &Path, pool: Option<&AgentPool>) -> Result<AgentCache> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_agent_cache(&text, pool)
}

/// A record with its answers aligned to the pool order.
#[derive(Debug, Clone)]
pub struct JoinedRecord {
    pub record: DatasetRecord,
    pub answers: Vec<String>,
    /// Cached F1 values, when the cache carried them.
    pub cached_f1: Vec<Option<f64>>,
    /// Pool indices with no cached answer (filled with "").
    pub missing: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct JoinReport {
    pub rows: Vec<JoinedRecord>,
    /// Record ids dropped because no agent had an answer.
    pub excluded: Vec<String>,
}

pub fn join_for_training(
    records: &[DatasetRecord],
    cache: &AgentCache,
    pool: &AgentPool,
) -> JoinReport {
    let mut report = JoinReport::default();
    for record in records {
        let mut answers = Vec::with_capacity(pool.len());
        let mut cached_f1 = Vec::with_capacity(pool.len());
        let mut missing = Vec::new();
        for (i, profile) in pool.profiles().iter().enumerate() {
            match cache.get(&record.id, &profile.agent_id) {
                Some(entry) => {
                    answers.push(entry.answer.clone());
                    cached_f1.push(entry.f1);
                }
                None => {
                    answers.push(String::new());
                    cached_f1.push(None);
                    missing.push(i);
                }
            }
        }
        if missing.len() == pool.len() {
            report.excluded.push(record.id.clone());
            continue;
        }
        report.rows.push(JoinedRecord {
            record: record.clone(),
            answers,
            cached_f1,
            missing,
        });
    }
    report
}
