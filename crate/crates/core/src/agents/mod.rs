//! Online harness that produces the answer cache and agent-entity maps.
//!
//! Everything here writes the same files the offline pipeline reads, so it
//! can be skipped entirely when a cache already exists.

pub mod backend;
pub mod mock;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

pub use backend::{BackendConfig, ChatBackend, HttpBackend};
pub use mock::{MockBackend, MockServer, MockTruth};
use prompts::{render, Message};

use crate::dataio::{AgentAnswerRecord, AgentDesign, AgentPool, AgentProfile, DatasetRecord};
use crate::eval::token_f1;
use crate::route::weighted_vote;
use crate::{Error, Result};

/// Contents of the last balanced `\boxed{...}`. Without one, the last
/// non-empty line with markup stripped, and `unboxed = true`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boxed {
    pub answer: String,
    pub unboxed: bool,
}

pub fn parse_boxed(raw: &str) -> Boxed {
    let mut last = None;
    let mut from = 0;
    while let Some(pos) = raw[from..].find("\\boxed{") {
        let start = from + pos + "\\boxed{".len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in raw[start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                last = Some(raw[start..e].trim().to_string());
                from = e + 1;
            }
            None => break,
        }
    }
    if let Some(answer) = last {
        return Boxed {
            answer,
            unboxed: false,
        };
    }
    let line = raw
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("");
    let stripped: String = line
        .trim()
        .trim_start_matches(['#', '>', '-', '*', ' '])
        .replace("**", "")
        .replace('`', "");
    Boxed {
        answer: stripped.trim().to_string(),
        unboxed: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub sc_samples: usize,
    pub max_revisions: usize,
    pub concurrency: usize,
    /// Entities kept per agent by the judge.
    pub judge_top_n: usize,
    pub transcripts_dir: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            sc_samples: 5,
            max_revisions: 2,
            concurrency: 4,
            judge_top_n: 5,
            transcripts_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub messages: Vec<Message>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub answer: String,
    pub unboxed: bool,
    pub raw_output: String,
    pub transcript: Vec<Exchange>,
}

impl DesignOutcome {
    pub fn calls(&self) -> usize {
        self.transcript.len()
    }
}

struct Session<'a> {
    backend: &'a dyn ChatBackend,
    model: String,
    temperature: f64,
    record: &'a DatasetRecord,
    transcript: Vec<Exchange>,
}

impl Session<'_> {
    fn ask(&mut self, system: &str, extra: &[(&str, &str)]) -> Result<String> {
        let messages = render(system, self.record, extra);
        let response = self
            .backend
            .complete(&self.model, &messages, self.temperature)?;
        self.transcript.push(Exchange {
            messages,
            response: response.clone(),
        });
        Ok(response)
    }
}

fn wants_revision(reflection: &str) -> bool {
    let lower = reflection.to_lowercase();
    match (lower.rfind("status: revise"), lower.rfind("status: final")) {
        (Some(r), Some(f)) => r > f,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Runs one agent design on one record.
pub fn run_design(
    profile: &AgentProfile,
    record: &DatasetRecord,
    backend: &dyn ChatBackend,
    backend_cfg: &BackendConfig,
    cfg: &HarnessConfig,
) -> Result<DesignOutcome> {
    let mut s = Session {
        backend,
        model: backend_cfg.model_for(&profile.backbone),
        temperature: backend_cfg.temperature,
        record,
        transcript: Vec::new(),
    };
    let final_text = match profile.design {
        AgentDesign::Raw => s.ask(prompts::RAW, &[])?,
        AgentDesign::Cot => s.ask(prompts::COT, &[])?,
        AgentDesign::Sc => {
            let n = cfg.sc_samples.max(1);
            let mut answers = Vec::with_capacity(n);
            for _ in 0..n {
                answers.push(parse_boxed(&s.ask(prompts::COT, &[])?).answer);
            }
            let vote = weighted_vote(&answers, &vec![1.0 / n as f64; n])?;
            format!("\\boxed{{{}}}", vote.winner)
        }
        AgentDesign::ReactReflect => {
            let mut answer_text = s.ask(prompts::REACT, &[])?;
            for _ in 0..=cfg.max_revisions {
                let answer = parse_boxed(&answer_text).answer;
                let reflection = s.ask(prompts::REFLECT, &[("Agent answer", &answer)])?;
                if !wants_revision(&reflection) || s.transcript.len() >= 2 + 2 * cfg.max_revisions {
                    break;
                }
                answer_text = s.ask(
                    prompts::REACT,
                    &[
                        ("Previous answer", &answer),
                        ("Reviewer feedback", &reflection),
                    ],
                )?;
            }
            answer_text
        }
        AgentDesign::Mad => {
            let a = s.ask(prompts::DEBATER_A, &[])?;
            let b = s.ask(prompts::DEBATER_B, &[("Debater A", &a)])?;
            s.ask(
                prompts::DEBATE_JUDGE,
                &[("Debater A", &a), ("Debater B", &b)],
            )?
        }
        AgentDesign::Summary => {
            let a = s.ask(prompts::THINK_A, &[])?;
            let b = s.ask(prompts::THINK_B, &[])?;
            s.ask(prompts::SUMMARIZE, &[("Agent A", &a), ("Agent B", &b)])?
        }
    };
    let boxed = parse_boxed(&final_text);
    let raw_output = s
        .transcript
        .iter()
        .map(|e| e.response.as_str())
        .collect::<Vec<_>>()
        .join("\n---\n");
    Ok(DesignOutcome {
        answer: boxed.answer,
        unboxed: boxed.unboxed,
        raw_output,
        transcript: s.transcript,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn transcript_name(record_id: &str, agent_id: &str) -> String {
    let safe: String = format!("{record_id}__{agent_id}")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

/// Fills `cache_path` with a row per (record, agent). Rows already present
/// are kept and skipped, so an interrupted run can simply be restarted;
/// rows that failed with a backend error are attempted again.
/// Rows are appended in (record, agent) order whatever the worker timing.
pub fn run_agents(
    records: &[DatasetRecord],
    pool: &AgentPool,
    backend: &dyn ChatBackend,
    backend_cfg: &BackendConfig,
    cfg: &HarnessConfig,
    cache_path: &Path,
) -> Result<RunSummary> {
    let mut done = HashSet::new();
    if cache_path.exists() {
        let text = fs::read_to_string(cache_path).map_err(|e| Error::io(cache_path, e))?;
        let cache = crate::dataio::parse_agent_cache(&text, None)?;
        // failed rows are retried; the cache loader keeps the last duplicate
        done.extend(
            cache
                .entries
                .into_iter()
                .filter(|(_, row)| row.error.as_deref().is_none_or(|e| e == "unboxed"))
                .map(|(key, _)| key),
        );
    }
    if let Some(dir) = &cfg.transcripts_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tasks: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| {
            pool.profiles()
                .iter()
                .enumerate()
                .filter(|(_, p)| !done.contains(&(rec.id.clone(), p.agent_id.clone())))
                .map(move |(a, _)| (r, a))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut summary = RunSummary {
        skipped: records.len() * pool.len() - tasks.len(),
        ..Default::default()
    };
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(cache_path)
        .map_err(|e| Error::io(cache_path, e))?;

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, AgentAnswerRecord, Option<Vec<Exchange>>)>();
    thread::scope(|scope| -> Result<()> {
        for _ in 0..cfg.concurrency.max(1).min(tasks.len().max(1)) {
            let tx = tx.clone();
            let (next, tasks) = (&next, &tasks);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(r, a)) = tasks.get(i) else { break };
                let (rec, profile) = (&records[r], &pool.profiles()[a]);
                let row = match run_design(profile, rec, backend, backend_cfg, cfg) {
                    Ok(o) => (
                        AgentAnswerRecord {
                            record_id: rec.id.clone(),
                            agent_id: profile.agent_id.clone(),
                            f1: Some(token_f1(&o.answer, &rec.gold_answers)),
                            answer: o.answer,
                            raw_output: Some(o.raw_output),
                            error: o.unboxed.then(|| "unboxed".to_string()),
                        },
                        Some(o.transcript),
                    ),
                    Err(e) => (
                        AgentAnswerRecord {
                            record_id: rec.id.clone(),
                            agent_id: profile.agent_id.clone(),
                            answer: String::new(),
                            raw_output: None,
                            f1: Some(0.0),
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                };
                if tx.send((i, row.0, row.1)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0usize;
        for (i, row, transcript) in rx {
            pending.insert(i, (row, transcript));
            while let Some((row, transcript)) = pending.remove(&expected) {
                if row.error.as_deref().is_some_and(|e| e != "unboxed") {
                    summary.failed += 1;
                }
                let line = serde_json::to_string(&row).expect("cache row serialises");
                writeln!(out, "{line}").map_err(|e| Error::io(cache_path, e))?;
                if let (Some(dir), Some(t)) = (&cfg.transcripts_dir, transcript) {
                    let p = dir.join(transcript_name(&row.record_id, &row.agent_id));
                    let body = serde_json::to_string_pretty(&t).expect("transcript serialises");
                    fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
                }
                summary.written += 1;
                expected += 1;
            }
        }
        Ok(())
    })?;
    out.flush().map_err(|e| Error::io(cache_path, e))?;
    Ok(summary)
}

/// One judge call per agent; `entities` are the graph's entity surfaces.
/// Returns the map plus flags for agents whose judge call failed or came
/// back empty (those fall back to lexical linking when the graph is built).
pub fn judge_agent_entities(
    record: &DatasetRecord,
    entities: &[String],
    triples: &[crate::extract::RelationTriple],
    pool: &AgentPool,
    backend: &dyn ChatBackend,
    backend_cfg: &BackendConfig,
    top_n: usize,
) -> (BTreeMap<String, BTreeSet<String>>, Vec<String>) {
    let mut map = BTreeMap::new();
    let mut flags = Vec::new();
    let entity_list = entities.join("\n");
    let relation_list: String = triples
        .iter()
        .map(|t| {
            format!(
                "{} -[{}]-> {}\n",
                t.head_surface, t.relation_label, t.tail_surface
            )
        })
        .collect();
    let known: BTreeMap<String, &String> = entities.iter().map(|e| (e.to_lowercase(), e)).collect();
    for p in pool.profiles() {
        let messages = render(
            prompts::ENTITY_JUDGE,
            record,
            &[
                ("Entities", &entity_list),
                ("Relations", &relation_list),
                ("Agent prompt", &p.description_text),
            ],
        );
        let reply = match backend.complete(
            &backend_cfg.model_for(&p.backbone),
            &messages,
            backend_cfg.temperature,
        ) {
            Ok(r) => r,
            Err(e) => {
                flags.push(format!(
                    "{}: judge failed ({e}), lexical fallback",
                    p.agent_id
                ));
                continue;
            }
        };
        let mut chosen = BTreeSet::new();
        let boxed = parse_boxed(&reply).answer;
        for name in boxed.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            if chosen.len() >= top_n {
                break;
            }
            match known.get(&name.to_lowercase()) {
                Some(e) => {
                    chosen.insert((*e).clone());
                }
                None => flags.push(format!(
                    "{}: judged entity {name:?} not in graph, skipped",
                    p.agent_id
                )),
            }
        }
        if chosen.is_empty() {
            flags.push(format!(
                "{}: empty judge response, lexical fallback",
                p.agent_id
            ));
            continue;
        }
        map.insert(p.agent_id.clone(), chosen);
    }
    (map, flags)
}

/// One line of an agent-entity map file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMapRow {
    pub record_id: String,
    pub agent_id: String,
    pub entities: Vec<String>,
}

pub type EntityMaps = BTreeMap<String, BTreeMap<String, BTreeSet<String>>>;

pub fn load_entity_maps(path: &Path) -> Result<EntityMaps> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut maps = EntityMaps::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: EntityMapRow =
            serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        maps.entry(row.record_id)
            .or_default()
            .insert(row.agent_id, row.entities.into_iter().collect());
    }
    Ok(maps)
}

pub fn entity_map_rows(
    record_id: &str,
    map: &BTreeMap<String, BTreeSet<String>>,
) -> Vec<EntityMapRow> {
    map.iter()
        .map(|(a, e)| EntityMapRow {
            record_id: record_id.to_string(),
            agent_id: a.clone(),
            entities: e.iter().cloned().collect(),
        })
        .collect()
}
