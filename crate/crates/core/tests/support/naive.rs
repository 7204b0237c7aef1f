//! Dense, loop-only reimplementation of the router forward pass. Shares no
//! code with the library beyond reading parameter values.
#![allow(clippy::needless_range_loop)]

use agentrouter_core::gnn::ModelParams;
use agentrouter_core::graph::{EdgeKind, KnowledgeGraph, NodeKind};

type Mat = Vec<Vec<f64>>;

fn kind_index(k: NodeKind) -> usize {
    match k {
        NodeKind::Query => 0,
        NodeKind::Agent => 1,
        NodeKind::Entity => 2,
        NodeKind::Relation => 3,
    }
}

fn matvec(m: &ndarray::Array2<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[[i, j]] * v[j]).sum())
        .collect()
}

/// Eight dense 0/1 adjacency matrices `adj[ψ][dst][src]`, in the order
/// query→entity, entity→query, incidence source, incidence target,
/// agent→entity, entity→agent, query→agent, agent→query.
fn adjacency(g: &KnowledgeGraph) -> Vec<Mat> {
    let n = g.nodes.len();
    let mut adj = vec![vec![vec![0.0; n]; n]; 8];
    for e in &g.edges {
        let (fwd, rev) = match e.kind {
            EdgeKind::QueryEntity => (0, Some(1)),
            EdgeKind::IncSrc => (2, None),
            EdgeKind::IncTgt => (3, None),
            EdgeKind::AgentEntity => (4, Some(5)),
            EdgeKind::QueryAgent => (6, Some(7)),
        };
        adj[fwd][e.dst][e.src] = 1.0;
        if let Some(r) = rev {
            adj[r][e.src][e.dst] = 1.0;
        }
    }
    adj
}

/// Scores and probabilities for the graph's agents in node order.
pub fn forward(
    g: &KnowledgeGraph,
    x: &ndarray::Array2<f64>,
    p: &ModelParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = g.nodes.len();
    let d = p.dims.hidden;
    let adj = adjacency(g);
    let mut h: Mat = (0..n)
        .map(|v| {
            let row: Vec<f64> = x.row(v).to_vec();
            matvec(&p.proj[kind_index(g.nodes[v].kind)], &row)
        })
        .collect();
    for layer in &p.layers {
        let mut next = vec![vec![0.0; d]; n];
        for v in 0..n {
            let mut z = vec![0.0; d];
            for psi in 0..8 {
                let srcs: Vec<usize> = (0..n).filter(|&u| adj[psi][v][u] != 0.0).collect();
                if srcs.is_empty() {
                    continue;
                }
                let mut mean = vec![0.0; d];
                for &u in &srcs {
                    let m = matvec(&layer.message[psi], &h[u]);
                    for i in 0..d {
                        mean[i] += m[i] / srcs.len() as f64;
                    }
                }
                for i in 0..d {
                    z[i] += layer.gate[psi] * mean[i];
                }
            }
            let mut cat = h[v].clone();
            cat.extend_from_slice(&z);
            let k = kind_index(g.nodes[v].kind);
            let pre = matvec(&layer.update[k], &cat);
            for i in 0..d {
                next[v][i] = (pre[i] + layer.update_bias[k][i]).max(0.0);
            }
        }
        h = next;
    }
    let agents: Vec<usize> = (0..n)
        .filter(|&v| g.nodes[v].kind == NodeKind::Agent)
        .collect();
    let scores: Vec<f64> = agents
        .iter()
        .map(|&a| {
            let mut cat = h[0].clone();
            cat.extend_from_slice(&h[a]);
            let pre = matvec(&p.head.hidden, &cat);
            let mut s = p.head.out_bias[0];
            for i in 0..pre.len() {
                s += p.head.out[i] * (pre[i] + p.head.hidden_bias[i]).max(0.0);
            }
            s
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let probs = scores.iter().map(|s| (s - max).exp() / z).collect();
    (scores, probs)
}
