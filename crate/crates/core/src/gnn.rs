//! RouterGNN: typed message passing over a [`KnowledgeGraph`] and a
//! query-agent scoring head.
//!
//! With `H⁰ = P[τ]·x`, each layer computes, per message kind ψ,
//! `m̃[ψ,v] = mean_{u→v} W[l,ψ]·h[u]`, gates them into
//! `z[v] = Σψ g[l,ψ]·m̃[ψ,v]` and updates
//! `h'[v] = relu(U[l,τ(v)]·[h[v] ‖ z[v]] + b[l,τ(v)])`.
//! Scores are `s(a) = m₂·relu(M₁·[h_q ‖ h_a] + c₁) + c₂` and the routing
//! distribution is their softmax.
//!
//! Besides the forward direction of every graph edge, query-entity,
//! agent-entity and query-agent edges also carry a reverse message kind,
//! so entity evidence can reach the query and agent states that are scored.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeKind, KnowledgeGraph, NodeKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    QueryEntity,
    EntityQuery,
    IncSrc,
    IncTgt,
    AgentEntity,
    EntityAgent,
    QueryAgent,
    AgentQuery,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::QueryEntity,
        MessageKind::EntityQuery,
        MessageKind::IncSrc,
        MessageKind::IncTgt,
        MessageKind::AgentEntity,
        MessageKind::EntityAgent,
        MessageKind::QueryAgent,
        MessageKind::AgentQuery,
    ];
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::QueryEntity => "query_entity",
            MessageKind::EntityQuery => "entity_query",
            MessageKind::IncSrc => "inc_src",
            MessageKind::IncTgt => "inc_tgt",
            MessageKind::AgentEntity => "agent_entity",
            MessageKind::EntityAgent => "entity_agent",
            MessageKind::QueryAgent => "query_agent",
            MessageKind::AgentQuery => "agent_query",
        }
    }

    /// Forward kind of a graph edge plus its reverse, if it has one.
    pub fn of_edge(kind: EdgeKind) -> (MessageKind, Option<MessageKind>) {
        match kind {
            EdgeKind::QueryEntity => (MessageKind::QueryEntity, Some(MessageKind::EntityQuery)),
            EdgeKind::IncSrc => (MessageKind::IncSrc, None),
            EdgeKind::IncTgt => (MessageKind::IncTgt, None),
            EdgeKind::AgentEntity => (MessageKind::AgentEntity, Some(MessageKind::EntityAgent)),
            EdgeKind::QueryAgent => (MessageKind::QueryAgent, Some(MessageKind::AgentQuery)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `W[l,ψ]`, indexed by [`MessageKind::index`].
    pub message: Vec<Array2<f64>>,
    pub gate: Array1<f64>,
    /// `U[l,τ]` (d_h × 2d_h), indexed by [`NodeKind::index`].
    pub update: Vec<Array2<f64>>,
    pub update_bias: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub out: Array1<f64>,
    pub out_bias: Array1<f64>,
}

/// All router weights. The same struct doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// `P[τ]` (d_h × d_in).
    pub proj: Vec<Array2<f64>>,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || (2.0 * rng.random::<f64>() - 1.0) * a)
}

impl ModelParams {
    pub fn init(seed: u64, dims: ModelDims) -> Result<Self> {
        if dims.d_in == 0 || dims.hidden == 0 || dims.layers == 0 {
            return Err(Error::Config(format!("invalid model dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = dims.hidden;
        let proj = (0..4).map(|_| glorot(&mut rng, h, dims.d_in)).collect();
        let layers = (0..dims.layers)
            .map(|_| LayerParams {
                message: (0..MessageKind::COUNT)
                    .map(|_| glorot(&mut rng, h, h))
                    .collect(),
                gate: Array1::ones(MessageKind::COUNT),
                update: (0..4).map(|_| glorot(&mut rng, h, 2 * h)).collect(),
                update_bias: (0..4).map(|_| Array1::zeros(h)).collect(),
            })
            .collect();
        let head = HeadParams {
            hidden: glorot(&mut rng, h, 2 * h),
            hidden_bias: Array1::zeros(h),
            out: glorot(&mut rng, 1, h)
                .into_shape_with_order(h)
                .expect("row vector"),
            out_bias: Array1::zeros(1),
        };
        Ok(ModelParams {
            dims,
            proj,
            layers,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    /// Closed-form parameter count for the given dims.
    pub fn expected_count(dims: ModelDims) -> usize {
        let (h, d, l, k) = (dims.hidden, dims.d_in, dims.layers, MessageKind::COUNT);
        4 * h * d + l * (k * h * h + k + 4 * (2 * h * h + h)) + 2 * h * h + h + h + 1
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _, t| n += t.len());
        n
    }

    /// Visits every tensor in canonical order as (name, shape, row-major data).
    pub fn for_each(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        for k in NodeKind::ALL {
            let t = &self.proj[k.index()];
            f(
                &format!("proj.{}", k.as_str()),
                t.shape(),
                t.as_slice().expect("standard layout"),
            );
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for m in MessageKind::ALL {
                let t = &layer.message[m.index()];
                f(
                    &format!("layer{l}.message.{}", m.as_str()),
                    t.shape(),
                    t.as_slice().expect("standard layout"),
                );
            }
            f(
                &format!("layer{l}.gate"),
                layer.gate.shape(),
                layer.gate.as_slice().expect("standard layout"),
            );
            for k in NodeKind::ALL {
                let t = &layer.update[k.index()];
                f(
                    &format!("layer{l}.update.{}", k.as_str()),
                    t.shape(),
                    t.as_slice().expect("standard layout"),
                );
                let b = &layer.update_bias[k.index()];
                f(
                    &format!("layer{l}.update_bias.{}", k.as_str()),
                    b.shape(),
                    b.as_slice().expect("standard layout"),
                );
            }
        }
        let hd = &self.head;
        f(
            "head.hidden",
            hd.hidden.shape(),
            hd.hidden.as_slice().expect("standard layout"),
        );
        f(
            "head.hidden_bias",
            hd.hidden_bias.shape(),
            hd.hidden_bias.as_slice().expect("standard layout"),
        );
        f(
            "head.out",
            hd.out.shape(),
            hd.out.as_slice().expect("standard layout"),
        );
        f(
            "head.out_bias",
            hd.out_bias.shape(),
            hd.out_bias.as_slice().expect("standard layout"),
        );
    }

    /// Mutable counterpart of [`ModelParams::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for k in NodeKind::ALL {
            f(
                &format!("proj.{}", k.as_str()),
                self.proj[k.index()]
                    .as_slice_mut()
                    .expect("standard layout"),
            );
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for m in MessageKind::ALL {
                f(
                    &format!("layer{l}.message.{}", m.as_str()),
                    layer.message[m.index()]
                        .as_slice_mut()
                        .expect("standard layout"),
                );
            }
            f(
                &format!("layer{l}.gate"),
                layer.gate.as_slice_mut().expect("standard layout"),
            );
            for k in NodeKind::ALL {
                f(
                    &format!("layer{l}.update.{}", k.as_str()),
                    layer.update[k.index()]
                        .as_slice_mut()
                        .expect("standard layout"),
                );
                f(
                    &format!("layer{l}.update_bias.{}", k.as_str()),
                    layer.update_bias[k.index()]
                        .as_slice_mut()
                        .expect("standard layout"),
                );
            }
        }
        let hd = &mut self.head;
        f(
            "head.hidden",
            hd.hidden.as_slice_mut().expect("standard layout"),
        );
        f(
            "head.hidden_bias",
            hd.hidden_bias.as_slice_mut().expect("standard layout"),
        );
        f("head.out", hd.out.as_slice_mut().expect("standard layout"));
        f(
            "head.out_bias",
            hd.out_bias.as_slice_mut().expect("standard layout"),
        );
    }

    /// Flattened copy of all tensors in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.count());
        self.for_each(|_, _, t| v.extend_from_slice(t));
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::data(format!(
                "flat parameter vector has {} values, expected {}",
                flat.len(),
                self.count()
            )));
        }
        let mut off = 0;
        self.for_each_mut(|_, t| {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        });
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        self.for_each(|_, _, t| s += t.iter().map(|x| x * x).sum::<f64>());
        s.sqrt()
    }
}

/// Mean-aggregation structure of one graph: for every message kind, the
/// destinations with their sorted in-neighbours.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n: usize,
    pub kinds: Vec<NodeKind>,
    pub rows_by_kind: [Vec<usize>; 4],
    pub query: usize,
    pub agents: Vec<usize>,
    pub inbound: Vec<Vec<(usize, Vec<usize>)>>,
}

impl Topology {
    pub fn new(graph: &KnowledgeGraph) -> Self {
        let n = graph.nodes.len();
        let kinds: Vec<NodeKind> = graph.nodes.iter().map(|v| v.kind).collect();
        let mut rows_by_kind: [Vec<usize>; 4] = Default::default();
        for (i, k) in kinds.iter().enumerate() {
            rows_by_kind[k.index()].push(i);
        }
        let mut lists: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n]; MessageKind::COUNT];
        for e in &graph.edges {
            let (fwd, rev) = MessageKind::of_edge(e.kind);
            lists[fwd.index()][e.dst].push(e.src);
            if let Some(r) = rev {
                lists[r.index()][e.src].push(e.dst);
            }
        }
        let inbound = lists
            .into_iter()
            .map(|per_node| {
                per_node
                    .into_iter()
                    .enumerate()
                    .filter(|(_, srcs)| !srcs.is_empty())
                    .map(|(v, mut srcs)| {
                        srcs.sort_unstable();
                        srcs.dedup();
                        (v, srcs)
                    })
                    .collect()
            })
            .collect();
        Topology {
            n,
            kinds,
            query: graph.query(),
            agents: graph.agents(),
            rows_by_kind,
            inbound,
        }
    }

    /// `A_ψ · H`: row v is the mean of H over v's ψ-in-neighbours.
    fn mean_aggregate(&self, psi: usize, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for (v, srcs) in &self.inbound[psi] {
            let mut row = out.row_mut(*v);
            for &u in srcs {
                row += &h.row(u);
            }
            row /= srcs.len() as f64;
        }
        out
    }

    /// `A_ψᵀ · G`.
    fn mean_scatter(&self, psi: usize, g: &Array2<f64>, out: &mut Array2<f64>) {
        for (v, srcs) in &self.inbound[psi] {
            let scaled = &g.row(*v) / srcs.len() as f64;
            for &u in srcs {
                let mut row = out.row_mut(u);
                row += &scaled;
            }
        }
    }
}

/// Numerically stable softmax.
pub fn score_to_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Numeric("softmax of an empty score vector".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("non-finite routing score".into()));
    }
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDistribution {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// `A_ψ · H` per message kind (empty kinds hold `None`).
    agg: Vec<Option<Array2<f64>>>,
    /// `[H ‖ Z]`.
    concat: Array2<f64>,
    /// Pre-activation of the update.
    pre: Array2<f64>,
}

/// Forward pass with every intermediate needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `hidden[l]` for l in 0..=L.
    pub hidden: Vec<Array2<f64>>,
    layers: Vec<LayerCache>,
    head_in: Array2<f64>,
    head_pre: Array2<f64>,
    pub routing: RoutingDistribution,
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values in {what}")))
    }
}

fn gather(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

fn scatter(dst: &mut Array2<f64>, rows: &[usize], src: &Array2<f64>) {
    for (i, &r) in rows.iter().enumerate() {
        dst.row_mut(r).assign(&src.row(i));
    }
}

/// One message-passing layer; returns `h_next` plus its cache.
fn layer_forward(topo: &Topology, h: &Array2<f64>, lp: &LayerParams) -> (Array2<f64>, LayerCache) {
    let d = h.ncols();
    let mut z = Array2::<f64>::zeros((topo.n, d));
    let mut agg = Vec::with_capacity(MessageKind::COUNT);
    for psi in 0..MessageKind::COUNT {
        if topo.inbound[psi].is_empty() {
            agg.push(None);
            continue;
        }
        let a = topo.mean_aggregate(psi, h);
        z.scaled_add(lp.gate[psi], &a.dot(&lp.message[psi].t()));
        agg.push(Some(a));
    }
    let mut concat = Array2::zeros((topo.n, 2 * d));
    concat.slice_mut(s![.., ..d]).assign(h);
    concat.slice_mut(s![.., d..]).assign(&z);
    let mut pre = Array2::zeros((topo.n, d));
    for k in NodeKind::ALL {
        let rows = &topo.rows_by_kind[k.index()];
        if rows.is_empty() {
            continue;
        }
        let c = gather(&concat, rows);
        let p = c.dot(&lp.update[k.index()].t()) + &lp.update_bias[k.index()];
        scatter(&mut pre, rows, &p);
    }
    let next = pre.mapv(|x| x.max(0.0));
    (next, LayerCache { agg, concat, pre })
}

/// Full forward pass on a prepared topology.
pub fn forward_pass(topo: &Topology, x: &Array2<f64>, params: &ModelParams) -> Result<ForwardPass> {
    let dims = params.dims;
    if x.nrows() != topo.n || x.ncols() != dims.d_in {
        return Err(Error::data(format!(
            "feature matrix is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            topo.n,
            dims.d_in
        )));
    }
    if topo.agents.is_empty() {
        return Err(Error::data("graph has no agent nodes"));
    }
    let mut h0 = Array2::zeros((topo.n, dims.hidden));
    for k in NodeKind::ALL {
        let rows = &topo.rows_by_kind[k.index()];
        if !rows.is_empty() {
            scatter(
                &mut h0,
                rows,
                &gather(x, rows).dot(&params.proj[k.index()].t()),
            );
        }
    }
    check_finite(&h0, "input projection (layer 0)")?;
    let mut hidden = vec![h0];
    let mut caches = Vec::with_capacity(dims.layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let (next, cache) = layer_forward(topo, hidden.last().expect("h0"), lp);
        check_finite(&next, &format!("hidden states after layer {}", l + 1))?;
        hidden.push(next);
        caches.push(cache);
    }
    let h = hidden.last().expect("final layer");
    let d = dims.hidden;
    let na = topo.agents.len();
    let mut head_in = Array2::zeros((na, 2 * d));
    for (i, &a) in topo.agents.iter().enumerate() {
        head_in.slice_mut(s![i, ..d]).assign(&h.row(topo.query));
        head_in.slice_mut(s![i, d..]).assign(&h.row(a));
    }
    let head_pre = head_in.dot(&params.head.hidden.t()) + &params.head.hidden_bias;
    let act = head_pre.mapv(|v| v.max(0.0));
    let scores: Vec<f64> = (act.dot(&params.head.out) + params.head.out_bias[0]).to_vec();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite values in scoring head".into()));
    }
    let probs = score_to_distribution(&scores)?;
    Ok(ForwardPass {
        hidden,
        layers: caches,
        head_in,
        head_pre,
        routing: RoutingDistribution { scores, probs },
    })
}

pub fn forward(
    graph: &KnowledgeGraph,
    x: &Array2<f64>,
    params: &ModelParams,
) -> Result<ForwardPass> {
    forward_pass(&Topology::new(graph), x, params)
}

/// Gradient of a loss with `∂L/∂s = d_scores` with respect to all params.
pub fn backward(
    topo: &Topology,
    x: &Array2<f64>,
    params: &ModelParams,
    fp: &ForwardPass,
    d_scores: ArrayView1<f64>,
) -> Result<ModelParams> {
    let d = params.dims.hidden;
    let mut g = params.zeros_like();

    // scoring head
    let act = fp.head_pre.mapv(|v| v.max(0.0));
    g.head.out = act.t().dot(&d_scores);
    g.head.out_bias[0] = d_scores.sum();
    let mut d_pre = Array2::zeros(fp.head_pre.raw_dim());
    for ((i, j), v) in d_pre.indexed_iter_mut() {
        if fp.head_pre[[i, j]] > 0.0 {
            *v = d_scores[i] * params.head.out[j];
        }
    }
    g.head.hidden = d_pre.t().dot(&fp.head_in);
    g.head.hidden_bias = d_pre.sum_axis(Axis(0));
    let d_in = d_pre.dot(&params.head.hidden);
    let mut dh = Array2::<f64>::zeros((topo.n, d));
    for (i, &a) in topo.agents.iter().enumerate() {
        let mut q = dh.row_mut(topo.query);
        q += &d_in.slice(s![i, ..d]);
        let mut r = dh.row_mut(a);
        r += &d_in.slice(s![i, d..]);
    }

    // message-passing layers, last to first
    for l in (0..params.layers.len()).rev() {
        let lp = &params.layers[l];
        let cache = &fp.layers[l];
        let gl = &mut g.layers[l];
        let d_pre = ndarray::Zip::from(&dh)
            .and(&cache.pre)
            .map_collect(|&gv, &p| if p > 0.0 { gv } else { 0.0 });
        let mut d_concat = Array2::zeros((topo.n, 2 * d));
        for k in NodeKind::ALL {
            let rows = &topo.rows_by_kind[k.index()];
            if rows.is_empty() {
                continue;
            }
            let dp = gather(&d_pre, rows);
            gl.update[k.index()] = dp.t().dot(&gather(&cache.concat, rows));
            gl.update_bias[k.index()] = dp.sum_axis(Axis(0));
            scatter(&mut d_concat, rows, &dp.dot(&lp.update[k.index()]));
        }
        let mut dh_prev = d_concat.slice(s![.., ..d]).to_owned();
        let dz = d_concat.slice(s![.., d..]).to_owned();
        for psi in 0..MessageKind::COUNT {
            let Some(a) = &cache.agg[psi] else { continue };
            let m = a.dot(&lp.message[psi].t());
            gl.gate[psi] = (&dz * &m).sum();
            gl.message[psi] = dz.t().dot(a) * lp.gate[psi];
            let d_agg = dz.dot(&lp.message[psi]) * lp.gate[psi];
            topo.mean_scatter(psi, &d_agg, &mut dh_prev);
        }
        dh = dh_prev;
    }

    for k in NodeKind::ALL {
        let rows = &topo.rows_by_kind[k.index()];
        if !rows.is_empty() {
            g.proj[k.index()] = gather(&dh, rows).t().dot(&gather(x, rows));
        }
    }

    let mut bad = None;
    g.for_each(|name, _, t| {
        if bad.is_none() && t.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    match bad {
        Some(name) => Err(Error::Numeric(format!("non-finite gradient in {name}"))),
        None => Ok(g),
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AGRCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub layers: usize,
    pub hidden: usize,
    pub d_in: usize,
    pub d_text: usize,
    pub embed_seed: u64,
    pub node_kinds: Vec<String>,
    pub edge_kinds: Vec<String>,
    pub agent_order: Vec<String>,
    pub tensors: Vec<TensorInfo>,
}

/// Parameters plus what is needed to featurise and route consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub d_text: usize,
    pub embed_seed: u64,
    pub agent_order: Vec<String>,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let mut tensors = Vec::new();
        self.params.for_each(|name, shape, _| {
            tensors.push(TensorInfo {
                name: name.to_string(),
                shape: shape.to_vec(),
            })
        });
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            layers: self.params.dims.layers,
            hidden: self.params.dims.hidden,
            d_in: self.params.dims.d_in,
            d_text: self.d_text,
            embed_seed: self.embed_seed,
            node_kinds: NodeKind::ALL
                .iter()
                .map(|k| k.as_str().to_string())
                .collect(),
            edge_kinds: MessageKind::ALL
                .iter()
                .map(|k| k.as_str().to_string())
                .collect(),
            agent_order: self.agent_order.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serialises");
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        self.params.for_each(|_, _, t| {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::data(format!("checkpoint: {m}"));
        let mut magic = [0u8; 8];
        bytes
            .read_exact(&mut magic)
            .map_err(|_| corrupt("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut len = [0u8; 4];
        bytes
            .read_exact(&mut len)
            .map_err(|_| corrupt("truncated header length"))?;
        let len = u32::from_le_bytes(len) as usize;
        if bytes.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..len]).map_err(|e| corrupt(&format!("header: {e}")))?;
        bytes = &bytes[len..];
        if header.format_version != CHECKPOINT_VERSION {
            return Err(corrupt(&format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let dims = ModelDims {
            d_in: header.d_in,
            hidden: header.hidden,
            layers: header.layers,
        };
        let mut params = ModelParams::init(0, dims)?;
        let expected = Checkpoint {
            params: params.clone(),
            d_text: header.d_text,
            embed_seed: header.embed_seed,
            agent_order: header.agent_order.clone(),
        }
        .header();
        if expected.tensors != header.tensors
            || expected.edge_kinds != header.edge_kinds
            || expected.node_kinds != header.node_kinds
        {
            return Err(corrupt("tensor layout does not match this build"));
        }
        if bytes.len() != 8 * params.count() {
            return Err(corrupt(&format!(
                "expected {} data bytes, found {}",
                8 * params.count(),
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.set_flat(&flat)?;
        Ok(Checkpoint {
            params,
            d_text: header.d_text,
            embed_seed: header.embed_seed,
            agent_order: header.agent_order,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Node, NodeFeatures};

    fn node(id: usize, kind: NodeKind, text: &str) -> Node {
        Node {
            id,
            kind,
            text: text.into(),
            features: NodeFeatures::default(),
        }
    }

    fn tiny() -> KnowledgeGraph {
        KnowledgeGraph {
            record_id: "t".into(),
            nodes: vec![
                node(0, NodeKind::Query, "q"),
                node(1, NodeKind::Agent, "a1"),
                node(2, NodeKind::Agent, "a2"),
                node(3, NodeKind::Entity, "e1"),
                node(4, NodeKind::Entity, "e2"),
                node(5, NodeKind::Relation, "r"),
            ],
            edges: vec![
                Edge {
                    src: 0,
                    kind: EdgeKind::QueryAgent,
                    dst: 1,
                },
                Edge {
                    src: 0,
                    kind: EdgeKind::QueryAgent,
                    dst: 2,
                },
                Edge {
                    src: 0,
                    kind: EdgeKind::QueryEntity,
                    dst: 3,
                },
                Edge {
                    src: 3,
                    kind: EdgeKind::IncSrc,
                    dst: 5,
                },
                Edge {
                    src: 5,
                    kind: EdgeKind::IncTgt,
                    dst: 4,
                },
                Edge {
                    src: 1,
                    kind: EdgeKind::AgentEntity,
                    dst: 4,
                },
            ],
            cached_triples: vec![],
        }
    }

    fn dims(d_in: usize) -> ModelDims {
        ModelDims {
            d_in,
            hidden: 8,
            layers: 2,
        }
    }

    fn features(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random::<f64>() - 0.5)
    }

    #[test]
    fn init_is_deterministic_and_counted() {
        let a = ModelParams::init(3, dims(10)).unwrap();
        assert_eq!(a, ModelParams::init(3, dims(10)).unwrap());
        assert!(a.layers.iter().all(|l| l.gate.iter().all(|&g| g == 1.0)));
        let big = ModelDims {
            d_in: 271,
            hidden: 256,
            layers: 2,
        };
        let p = ModelParams::init(0, big).unwrap();
        assert_eq!(p.count(), ModelParams::expected_count(big));
    }

    #[test]
    fn softmax_cases() {
        let p = score_to_distribution(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = score_to_distribution(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 0.999_999 && p[1].is_finite());
        let a = score_to_distribution(&[0.3, -1.0, 2.0]).unwrap();
        let b = score_to_distribution(&[5.3, 4.0, 7.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(score_to_distribution(&[]).is_err());
    }

    #[test]
    fn edge_order_does_not_matter() {
        let g = tiny();
        let x = features(6, 10, 1);
        let p = ModelParams::init(0, dims(10)).unwrap();
        let a = forward(&g, &x, &p).unwrap().routing;
        let mut h = g.clone();
        h.edges.reverse();
        let b = forward(&h, &x, &p).unwrap().routing;
        assert_eq!(a, b);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_agents_score_equally() {
        let mut g = tiny();
        g.edges.retain(|e| e.kind != EdgeKind::AgentEntity);
        let mut x = features(6, 10, 2);
        let row = x.row(1).to_owned();
        x.row_mut(2).assign(&row);
        let p = ModelParams::init(0, dims(10)).unwrap();
        let r = forward(&g, &x, &p).unwrap().routing;
        assert_eq!(r.scores[0], r.scores[1]);
    }

    #[test]
    fn zero_edge_layer_is_local_update() {
        let mut g = tiny();
        g.edges.clear();
        let x = features(6, 10, 4);
        let p = ModelParams::init(1, dims(10)).unwrap();
        let fp = forward(&g, &x, &p).unwrap();
        let h0 = &fp.hidden[0];
        for v in 0..6 {
            let k = g.nodes[v].kind.index();
            let mut c = Array1::zeros(16);
            c.slice_mut(s![..8]).assign(&h0.row(v));
            let want =
                (p.layers[0].update[k].dot(&c) + &p.layers[0].update_bias[k]).mapv(|x| x.max(0.0));
            for (a, b) in fp.hidden[1].row(v).iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = tiny();
        let topo = Topology::new(&g);
        let x = features(6, 10, 5);
        let mut p = ModelParams::init(9, dims(10)).unwrap();
        // move biases and gates off their init values
        p.for_each_mut(|name, t| {
            if name.contains("bias") || name.contains("gate") {
                for (i, v) in t.iter_mut().enumerate() {
                    *v += 0.05 * ((i % 7) as f64 - 3.0);
                }
            }
        });
        let w = [0.3, -0.7];
        let loss = |p: &ModelParams| -> f64 {
            let s = forward_pass(&topo, &x, p).unwrap().routing.scores;
            s[0] * w[0] + s[1] * w[1]
        };
        let fp = forward_pass(&topo, &x, &p).unwrap();
        let grad = backward(&topo, &x, &p, &fp, ndarray::aview1(&w))
            .unwrap()
            .to_flat();
        let base = p.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut q = p.clone();
            let mut v = base.clone();
            v[i] += h;
            q.set_flat(&v).unwrap();
            let up = loss(&q);
            v[i] -= 2.0 * h;
            q.set_flat(&v).unwrap();
            let down = loss(&q);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[i]).abs();
            assert!(
                err < 1e-6 || err / fd.abs().max(grad[i].abs()) < 1e-4,
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = ModelParams::init(11, dims(10)).unwrap();
        let ck = Checkpoint {
            params: p,
            d_text: 8,
            embed_seed: 3,
            agent_order: vec!["a".into(), "b".into()],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let g = tiny();
        let x = features(6, 10, 6);
        assert_eq!(
            forward(&g, &x, &ck.params).unwrap().routing,
            forward(&g, &x, &back.params).unwrap().routing
        );
        let mut bytes = ck.to_bytes();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
