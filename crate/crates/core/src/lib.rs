//! Knowledge-graph guided routing over a pool of question-answering agents.
//!
//! Each QA instance (question + context) becomes a small heterogeneous graph of
//! query, entity, relation and agent nodes. A type-aware graph network scores
//! every (query, agent) pair, the scores are turned into a distribution over
//! agents, and the agents' cached answers are fused by weighted voting.
//!
//! The crate is organised along the pipeline:
//!
//! - [`dataio`]: dataset / agent-cache loading, splits, joining
//! - [`extract`]: rule-based entity, relation and question-cue extraction
//! - [`graph`]: per-instance knowledge graph with relation-node rewiring
//! - [`embed`]: hashed text embeddings and node featurisation
//! - [`gnn`]: the router network, its parameters and checkpoint format
//! - [`train`]: soft targets, KL loss, gradients, AdamW loop
//! - [`route`]: top-k clipping and weighted voting
//! - [`eval`]: EM / F1, baselines, aggregation over seeds, transfer drops
//! - [`agents`]: optional online harness producing the answer cache
//! - [`commands`]: the end-to-end commands behind the CLI

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod commands;
pub mod dataio;
pub mod embed;
pub mod error;
pub mod eval;
pub mod extract;
pub mod gnn;
pub mod graph;
pub mod route;
pub mod synthetic;
pub mod train;

pub use error::{Error, ErrorKind, Result};
