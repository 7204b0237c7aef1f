//! Top-k clipping and weighted voting over agent answers.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::eval::normalize_answer;
use crate::gnn::{forward, ModelParams};
use crate::graph::KnowledgeGraph;
use crate::{Error, Result};

/// Keeps the `k` most probable agents, ordered by `(-p, index)`, with their
/// weights renormalised to sum to one.
pub fn top_k_clip(probs: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if probs.is_empty() {
        return Err(Error::data("cannot clip an empty distribution"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k.min(probs.len()));
    let mass: f64 = order.iter().map(|&i| probs[i]).sum();
    if !(mass > 0.0) {
        let w = 1.0 / order.len() as f64;
        return Ok(order.into_iter().map(|i| (i, w)).collect());
    }
    Ok(order.into_iter().map(|i| (i, probs[i] / mass)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub winner: String,
    /// Summed weight per normalised answer.
    pub tally: BTreeMap<String, f64>,
    /// Every answer normalised to the empty string.
    pub all_empty: bool,
}

struct Group {
    weight: f64,
    max_single: f64,
    first_index: usize,
    surface_index: usize,
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Sums weights per normalised answer and returns the heaviest group.
/// Ties go to the group with the larger single supporter weight, then to the
/// group whose first supporter comes earliest. Empty answers only win when
/// nothing else was proposed.
pub fn weighted_vote(answers: &[String], weights: &[f64]) -> Result<Vote> {
    if answers.len() != weights.len() {
        return Err(Error::data(format!(
            "{} answers but {} weights",
            answers.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::data("vote weights must be finite and nonnegative"));
    }
    let keys: Vec<String> = answers.iter().map(|a| normalize_answer(a)).collect();
    let all_empty = keys.iter().all(|k| k.is_empty());
    let mut groups: BTreeMap<&str, Group> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() && !all_empty {
            continue;
        }
        let w = weights[i];
        let g = groups.entry(key).or_insert(Group {
            weight: 0.0,
            max_single: f64::NEG_INFINITY,
            first_index: i,
            surface_index: i,
        });
        g.weight += w;
        if w > g.max_single {
            g.max_single = w;
            g.surface_index = i;
        }
    }
    let best = groups.values().reduce(|a, b| {
        let a_wins = if !nearly_equal(a.weight, b.weight) {
            a.weight > b.weight
        } else if !nearly_equal(a.max_single, b.max_single) {
            a.max_single > b.max_single
        } else {
            a.first_index < b.first_index
        };
        if a_wins {
            a
        } else {
            b
        }
    });
    let winner = match best {
        Some(g) if !all_empty => answers[g.surface_index].trim().to_string(),
        _ => String::new(),
    };
    Ok(Vote {
        winner,
        tally: groups
            .iter()
            .map(|(k, g)| (k.to_string(), g.weight))
            .collect(),
        all_empty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingResult {
    pub record_id: String,
    pub probs: Vec<f64>,
    pub selected: Vec<(String, f64)>,
    pub fused_answer: String,
    pub tally: BTreeMap<String, f64>,
}

/// Clipping and voting for an already computed distribution.
pub fn route_distribution(
    record_id: &str,
    probs: &[f64],
    answers: &[String],
    agent_ids: &[String],
    k: usize,
) -> Result<RoutingResult> {
    if probs.len() != answers.len() || probs.len() != agent_ids.len() {
        return Err(Error::data(format!(
            "{record_id}: {} probabilities, {} answers, {} agents",
            probs.len(),
            answers.len(),
            agent_ids.len()
        )));
    }
    let selected = top_k_clip(probs, k)?;
    let sel_answers: Vec<String> = selected.iter().map(|&(i, _)| answers[i].clone()).collect();
    let sel_weights: Vec<f64> = selected.iter().map(|&(_, w)| w).collect();
    let vote = weighted_vote(&sel_answers, &sel_weights)?;
    Ok(RoutingResult {
        record_id: record_id.to_string(),
        probs: probs.to_vec(),
        selected: selected
            .into_iter()
            .map(|(i, w)| (agent_ids[i].clone(), w))
            .collect(),
        fused_answer: vote.winner,
        tally: vote.tally,
    })
}

/// forward → softmax → top-k → weighted vote.
pub fn route_record(
    graph: &KnowledgeGraph,
    features: &Array2<f64>,
    params: &ModelParams,
    answers: &[String],
    agent_ids: &[String],
    k: usize,
) -> Result<RoutingResult> {
    let fp = forward(graph, features, params)?;
    route_distribution(&graph.record_id, &fp.routing.probs, answers, agent_ids, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(top_k_clip(&[0.4, 0.4, 0.2], 1).unwrap(), vec![(0, 1.0)]);
        let r = top_k_clip(&[0.5, 0.3, 0.2], 2).unwrap();
        assert_eq!(r[0].0, 0);
        assert!((r[0].1 - 0.625).abs() < 1e-15 && (r[1].1 - 0.375).abs() < 1e-15);
        let p = vec![1.0 / 24.0; 24];
        assert_eq!(top_k_clip(&p, 30).unwrap().len(), 24);
        assert!(top_k_clip(&p, 0).is_err());
    }

    #[test]
    fn vote_examples() {
        // single letters would collide with the article "a"
        let v = weighted_vote(&s(&["X", "Y", "X"]), &[0.2, 0.45, 0.35]).unwrap();
        assert_eq!(v.winner, "X");
        assert!((v.tally["x"] - 0.55).abs() < 1e-15);
        assert!((v.tally["y"] - 0.45).abs() < 1e-15);
        let v = weighted_vote(&s(&["x", "x"]), &[0.5, 0.5]).unwrap();
        assert_eq!(v.tally.len(), 1);
        // 0.5 vs 0.5, max single weight 0.5 vs 0.3
        let v = weighted_vote(&s(&["p", "q", "q", "q"]), &[0.5, 0.3, 0.1, 0.1]).unwrap();
        assert_eq!(v.winner, "p");
        let v = weighted_vote(&s(&["q", "p"]), &[0.5, 0.5]).unwrap();
        assert_eq!(v.winner, "q");
        let v = weighted_vote(&s(&["", "the"]), &[0.5, 0.5]).unwrap();
        assert!(v.all_empty && v.winner.is_empty());
        let v = weighted_vote(&s(&["", "b"]), &[0.9, 0.1]).unwrap();
        assert_eq!(v.winner, "b");
    }

    #[test]
    fn surface_of_heaviest_supporter() {
        let v = weighted_vote(&s(&["gay lawrence", "Gay Lawrence"]), &[0.2, 0.3]).unwrap();
        assert_eq!(v.winner, "Gay Lawrence");
    }

    #[test]
    fn devils_hairpin_example() {
        let ids = s(&[
            "BACKBONE::gpt_oss_20b::AGENT::cot",
            "BACKBONE::gpt_oss_20b::AGENT::sc",
            "BACKBONE::gpt_oss_20b::AGENT::raw",
            "BACKBONE::gpt_oss_20b::AGENT::react_reflect",
            "BACKBONE::mixtral_8x7b::AGENT::mad",
            "BACKBONE::llama3_8b_lite::AGENT::mad",
            "BACKBONE::mixtral_8x7b::AGENT::cot",
            "BACKBONE::mixtral_8x7b::AGENT::sc",
        ]);
        let (h, f) = ("The Devil's Hairpin", "The Fatal Mistake");
        let answers = s(&[h, h, h, h, f, f, h, f]);
        let probs = [
            0.124811694,
            0.124024361,
            0.123276740,
            0.120928459,
            0.008660691,
            0.009608842,
            0.009781577,
            0.009870600,
        ];
        let r = route_distribution("ex3", &probs, &answers, &ids, 4).unwrap();
        assert_eq!(r.fused_answer, h);
        assert_eq!(r.selected.len(), 4);
        assert_eq!(r.selected[0].0, ids[0]);
    }
}
