//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agentrouter_core::commands::RunConfig;
use agentrouter_core::dataio::AgentPool;
use agentrouter_core::embed::TextEmbedder;
use agentrouter_core::eval::token_f1;
use agentrouter_core::gnn::Topology;
use agentrouter_core::graph::build_record_graph;
use agentrouter_core::synthetic;
use agentrouter_core::train::TrainExample;

pub mod naive;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_config() -> RunConfig {
    RunConfig::load(&fixture_dir().join("config.toml")).expect("fixture config")
}

/// Writes `cfg` to `dir/config.toml` with absolute paths.
pub fn write_config(cfg: &RunConfig, dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

/// Featurised examples of `n` synthetic records.
pub fn synthetic_examples(
    n: usize,
    seed: u64,
    prefix: &str,
    embedder: &TextEmbedder,
) -> Vec<TrainExample> {
    let pool = AgentPool::default_pool();
    let set = synthetic::generate(n, seed, prefix, &pool);
    set.records
        .iter()
        .zip(set.cache.chunks(pool.len()))
        .map(|(r, rows)| {
            let (g, _) = build_record_graph(r, &pool, &BTreeMap::new()).unwrap();
            let answers: Vec<String> = rows.iter().map(|a| a.answer.clone()).collect();
            TrainExample {
                record_id: r.id.clone(),
                topo: Topology::new(&g),
                features: embedder.featurize(&g),
                f1: answers
                    .iter()
                    .map(|a| token_f1(a, &r.gold_answers))
                    .collect(),
                answers,
                golds: r.gold_answers.clone(),
            }
        })
        .collect()
}
