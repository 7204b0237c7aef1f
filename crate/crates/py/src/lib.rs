//! Python bindings: metrics, routing primitives, graph construction and
//! checkpoint inference.

use std::collections::BTreeMap;
use std::path::PathBuf;

use agentrouter_core::dataio::{AgentPool, DatasetRecord};
use agentrouter_core::embed::TextEmbedder;
use agentrouter_core::gnn::Checkpoint;
use agentrouter_core::graph::{build_record_graph, KnowledgeGraph};
use agentrouter_core::{commands, eval, extract, route, train, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Parse { .. } | Error::Data(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    eval::normalize_answer(text)
}

#[pyfunction]
fn exact_match(prediction: &str, golds: Vec<String>) -> f64 {
    eval::exact_match(prediction, &golds)
}

#[pyfunction]
fn token_f1(prediction: &str, golds: Vec<String>) -> f64 {
    eval::token_f1(prediction, &golds)
}

/// Indices and renormalised weights of the `k` most probable agents.
#[pyfunction]
fn top_k_clip(probs: Vec<f64>, k: usize) -> PyResult<Vec<(usize, f64)>> {
    route::top_k_clip(&probs, k).map_err(py_err)
}

/// Returns `(winner, tally)` where tally maps normalised answers to weight.
#[pyfunction]
fn weighted_vote(
    answers: Vec<String>,
    weights: Vec<f64>,
) -> PyResult<(String, BTreeMap<String, f64>)> {
    let v = route::weighted_vote(&answers, &weights).map_err(py_err)?;
    Ok((v.winner, v.tally))
}

#[pyfunction]
#[pyo3(signature = (f1, tau = 0.25, eps = 1e-3))]
fn soft_targets(f1: Vec<f64>, tau: f64, eps: f64) -> PyResult<Vec<f64>> {
    Ok(train::soft_targets(&f1, tau, eps).map_err(py_err)?.probs)
}

#[pyfunction]
fn kl_loss(target: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    train::kl_loss(&target, &predicted).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (text, d_text = 256, seed = 0))]
fn embed_text(text: &str, d_text: usize, seed: u64) -> Vec<f64> {
    agentrouter_core::embed::embed_text(text, d_text, seed)
}

/// `(surface, kind, frequency)` for each entity mention.
#[pyfunction]
fn extract_entities(text: &str) -> Vec<(String, String, u32)> {
    extract::extract_entities(text)
        .into_iter()
        .map(|m| {
            (
                m.surface,
                format!("{:?}", m.kind).to_lowercase(),
                m.frequency,
            )
        })
        .collect()
}

/// `(head, relation, tail)` triples.
#[pyfunction]
fn extract_triples(text: &str) -> Vec<(String, String, String)> {
    let ents = extract::extract_entities(text);
    extract::extract_triples(text, &ents)
        .into_iter()
        .map(|t| (t.head_surface, t.relation_label, t.tail_surface))
        .collect()
}

/// Ids of the default 24-agent pool in canonical order.
#[pyfunction]
fn default_agent_ids() -> Vec<String> {
    AgentPool::default_pool().ids()
}

/// A per-record heterogeneous graph over the default agent pool.
#[pyclass(module = "agentrouter")]
struct Graph {
    inner: KnowledgeGraph,
}

#[pymethods]
impl Graph {
    #[staticmethod]
    #[pyo3(signature = (record_id, question, context, answers = Vec::new()))]
    fn build(
        record_id: String,
        question: String,
        context: String,
        answers: Vec<String>,
    ) -> PyResult<Self> {
        let record = DatasetRecord {
            id: record_id,
            question,
            context,
            gold_answers: answers,
            question_type: None,
            source_dataset: String::new(),
            pre_extracted: None,
        };
        let pool = AgentPool::default_pool();
        let (inner, _) = build_record_graph(&record, &pool, &BTreeMap::new()).map_err(py_err)?;
        Ok(Graph { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Graph {
            inner: KnowledgeGraph::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn record_id(&self) -> &str {
        &self.inner.record_id
    }

    fn num_nodes(&self) -> usize {
        self.inner.nodes.len()
    }

    fn num_edges(&self) -> usize {
        self.inner.edges.len()
    }

    /// `(kind, text)` per node.
    fn nodes(&self) -> Vec<(String, String)> {
        self.inner
            .nodes
            .iter()
            .map(|n| (n.kind.as_str().to_string(), n.text.clone()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph({:?}, nodes={}, edges={})",
            self.inner.record_id,
            self.inner.nodes.len(),
            self.inner.edges.len()
        )
    }
}

/// A trained router loaded from a checkpoint file.
#[pyclass(module = "agentrouter")]
struct Router {
    ckpt: Checkpoint,
    embedder: TextEmbedder,
}

#[pymethods]
impl Router {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(py_err)?;
        let embedder = TextEmbedder::new(ckpt.d_text, ckpt.embed_seed).map_err(py_err)?;
        Ok(Router { ckpt, embedder })
    }

    #[getter]
    fn agent_order(&self) -> Vec<String> {
        self.ckpt.agent_order.clone()
    }

    /// Routing distribution over agents for one graph.
    fn probabilities(&self, graph: &Graph) -> PyResult<Vec<f64>> {
        let x = self.embedder.featurize(&graph.inner);
        let fp =
            agentrouter_core::gnn::forward(&graph.inner, &x, &self.ckpt.params).map_err(py_err)?;
        Ok(fp.routing.probs)
    }

    /// Returns `{"probs", "selected", "fused_answer"}`; `answers` follows
    /// `agent_order`.
    #[pyo3(signature = (graph, answers, k = 24))]
    fn route<'py>(
        &self,
        py: Python<'py>,
        graph: &Graph,
        answers: Vec<String>,
        k: usize,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let x = self.embedder.featurize(&graph.inner);
        let r = route::route_record(
            &graph.inner,
            &x,
            &self.ckpt.params,
            &answers,
            &self.ckpt.agent_order,
            k,
        )
        .map_err(py_err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("probs", r.probs)?;
        d.set_item("selected", r.selected)?;
        d.set_item("fused_answer", r.fused_answer)?;
        Ok(d)
    }
}

fn run_command(
    config: PathBuf,
    out: PathBuf,
    f: impl FnOnce(
        commands::RunConfig,
        &std::path::Path,
    ) -> agentrouter_core::Result<commands::CommandOutput>,
) -> PyResult<String> {
    let cfg = commands::RunConfig::load(&config).map_err(py_err)?;
    let out = commands::prepare_out_dir(Some(&out), "py").map_err(py_err)?;
    Ok(f(cfg, &out).map_err(py_err)?.summary)
}

/// Runs the `train` command; returns its summary text.
#[pyfunction]
fn train_from_config(py: Python<'_>, config: PathBuf, out: PathBuf) -> PyResult<String> {
    py.detach(|| run_command(config, out, commands::cmd_train))
}

/// Runs the `eval` command; returns the report text.
#[pyfunction]
#[pyo3(signature = (config, out, checkpoint = None))]
fn eval_from_config(
    py: Python<'_>,
    config: PathBuf,
    out: PathBuf,
    checkpoint: Option<PathBuf>,
) -> PyResult<String> {
    py.detach(|| {
        run_command(config, out, |c, o| {
            commands::cmd_eval(c, checkpoint.as_deref(), o)
        })
    })
}

#[pymodule]
fn agentrouter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(top_k_clip, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_vote, m)?)?;
    m.add_function(wrap_pyfunction!(soft_targets, m)?)?;
    m.add_function(wrap_pyfunction!(kl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(embed_text, m)?)?;
    m.add_function(wrap_pyfunction!(extract_entities, m)?)?;
    m.add_function(wrap_pyfunction!(extract_triples, m)?)?;
    m.add_function(wrap_pyfunction!(default_agent_ids, m)?)?;
    m.add_function(wrap_pyfunction!(train_from_config, m)?)?;
    m.add_function(wrap_pyfunction!(eval_from_config, m)?)?;
    m.add_class::<Graph>()?;
    m.add_class::<Router>()?;
    Ok(())
}
