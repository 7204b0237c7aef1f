//! Answer metrics, seed aggregation, heuristic baselines and drop tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataio::{AgentDesign, AgentPool};
use crate::route::weighted_vote;
use crate::{Error, Result};

static ARTICLES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"));

/// Lower-case, drop ASCII punctuation, remove articles, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-bag F1, maximised over the gold references.
pub fn token_f1(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(pred, g)).fold(0.0, f64::max)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub seeds: usize,
    pub em_mean: f64,
    pub em_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// Per-seed dataset means, ×100.
    pub seed_em: Vec<f64>,
    pub seed_f1: Vec<f64>,
    #[serde(skip)]
    pub per_record: Vec<Vec<(f64, f64)>>,
}

impl EvalReport {
    fn from_seed_scores(
        method: &str,
        dataset: &str,
        k: Option<usize>,
        per_record: Vec<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        if per_record.is_empty() {
            return Err(Error::data(format!("{method}: no seed results")));
        }
        let n = per_record[0].len();
        if n == 0 {
            return Err(Error::data(format!("{method}: no records to score")));
        }
        if let Some(bad) = per_record.iter().find(|s| s.len() != n) {
            return Err(Error::data(format!(
                "{method}: seed result has {} records, expected {n}",
                bad.len()
            )));
        }
        let seed_em: Vec<f64> = per_record
            .iter()
            .map(|s| 100.0 * s.iter().map(|r| r.0).sum::<f64>() / n as f64)
            .collect();
        let seed_f1: Vec<f64> = per_record
            .iter()
            .map(|s| 100.0 * s.iter().map(|r| r.1).sum::<f64>() / n as f64)
            .collect();
        let (em_mean, em_std) = mean_std(&seed_em);
        let (f1_mean, f1_std) = mean_std(&seed_f1);
        Ok(EvalReport {
            method: method.to_string(),
            dataset: dataset.to_string(),
            k,
            seeds: per_record.len(),
            em_mean,
            em_std,
            f1_mean,
            f1_std,
            seed_em,
            seed_f1,
            per_record,
        })
    }
}

/// Scores predictions made under several seeds: `predictions[s][r]` is the
/// prediction for record `r` under seed `s`.
pub fn evaluate_method(
    method: &str,
    dataset: &str,
    k: Option<usize>,
    predictions: &[Vec<String>],
    golds: &[Vec<String>],
) -> Result<EvalReport> {
    let mut per_record = Vec::with_capacity(predictions.len());
    for preds in predictions {
        if preds.len() != golds.len() {
            return Err(Error::data(format!(
                "{method}: {} predictions for {} records",
                preds.len(),
                golds.len()
            )));
        }
        per_record.push(
            preds
                .iter()
                .zip(golds)
                .map(|(p, g)| (exact_match(p, g), token_f1(p, g)))
                .collect(),
        );
    }
    EvalReport::from_seed_scores(method, dataset, k, per_record)
}

/// One record's cached answers in canonical agent order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub answers: Vec<String>,
    pub missing: Vec<bool>,
    pub golds: Vec<String>,
}

impl ScoredRecord {
    fn available(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.answers.len()).filter(|&i| !self.missing[i])
    }
}

/// Per-agent mean F1 over records (missing answers count as 0).
pub fn agent_mean_f1(records: &[ScoredRecord], n_agents: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_agents];
    for r in records {
        for (i, s) in sums.iter_mut().enumerate() {
            *s += token_f1(&r.answers[i], &r.golds);
        }
    }
    sums.iter()
        .map(|s| s / records.len().max(1) as f64)
        .collect()
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The five heuristic rows. Selections (best_llm, best_agent) use `train`;
/// every row is scored on `test`. `seeds` only sets the reported seed
/// count: these rows do not depend on the seed, so their std is 0.
pub fn baselines(
    pool: &AgentPool,
    train: &[ScoredRecord],
    test: &[ScoredRecord],
    dataset: &str,
    seeds: usize,
) -> Result<Vec<EvalReport>> {
    if test.is_empty() {
        return Err(Error::data("baselines need at least one test record"));
    }
    let n = pool.len();
    if let Some(r) = train.iter().chain(test).find(|r| r.answers.len() != n) {
        return Err(Error::data(format!(
            "answer vector of length {} for a pool of {n}",
            r.answers.len()
        )));
    }
    let score = |a: &str, g: &[String]| (exact_match(a, g), token_f1(a, g));
    let repeat = |rows: Vec<(f64, f64)>| vec![rows; seeds.max(1)];

    let average = test
        .iter()
        .map(|r| {
            let avail: Vec<usize> = r.available().collect();
            let m = avail.len().max(1) as f64;
            let (em, f1) = avail.iter().fold((0.0, 0.0), |acc, &i| {
                let s = score(&r.answers[i], &r.golds);
                (acc.0 + s.0, acc.1 + s.1)
            });
            (em / m, f1 / m)
        })
        .collect();

    let majority = test
        .iter()
        .map(|r| {
            let avail: Vec<usize> = r.available().collect();
            let answers: Vec<String> = avail.iter().map(|&i| r.answers[i].clone()).collect();
            let weights = vec![1.0 / avail.len().max(1) as f64; avail.len()];
            let vote = weighted_vote(&answers, &weights).expect("uniform weights are valid");
            score(&vote.winner, &r.golds)
        })
        .collect();

    let train_means = agent_mean_f1(if train.is_empty() { test } else { train }, n);
    let best_agent = argmax_first(&train_means);
    let raw: Vec<usize> = pool
        .profiles()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.design == AgentDesign::Raw)
        .map(|(i, _)| i)
        .collect();
    let best_llm = if raw.is_empty() {
        best_agent
    } else {
        raw[argmax_first(&raw.iter().map(|&i| train_means[i]).collect::<Vec<_>>())]
    };
    let single = |a: usize| -> Vec<(f64, f64)> {
        test.iter()
            .map(|r| score(&r.answers[a], &r.golds))
            .collect()
    };

    let oracle = test
        .iter()
        .map(|r| {
            r.available().fold((0.0, 0.0), |acc: (f64, f64), i| {
                let s = score(&r.answers[i], &r.golds);
                (acc.0.max(s.0), acc.1.max(s.1))
            })
        })
        .collect();

    Ok(vec![
        EvalReport::from_seed_scores("average", dataset, None, repeat(average))?,
        EvalReport::from_seed_scores("majority_vote", dataset, None, repeat(majority))?,
        EvalReport::from_seed_scores("best_llm", dataset, None, repeat(single(best_llm)))?,
        EvalReport::from_seed_scores("best_agent", dataset, None, repeat(single(best_agent)))?,
        EvalReport::from_seed_scores("oracle", dataset, None, repeat(oracle))?,
    ])
}

/// Scores per-record router predictions (one vector per seed).
pub fn router_report(
    predictions: &[Vec<String>],
    test: &[ScoredRecord],
    dataset: &str,
    k: usize,
) -> Result<EvalReport> {
    let golds: Vec<Vec<String>> = test.iter().map(|r| r.golds.clone()).collect();
    evaluate_method("router", dataset, Some(k), predictions, &golds)
}

/// Canonical row order of the main report.
pub const REPORT_ROWS: [&str; 6] = [
    "average",
    "majority_vote",
    "best_llm",
    "best_agent",
    "router",
    "oracle",
];

pub fn format_report(rows: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<15}{:>18}{:>18}", "method", "EM", "F1");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<15}{:>18}{:>18}",
            r.method,
            format!("{:.2} ± {:.2}", r.em_mean, r.em_std),
            format!("{:.2} ± {:.2}", r.f1_mean, r.f1_std)
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    #[default]
    Relative,
    Absolute,
}

impl std::str::FromStr for DropMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(DropMode::Relative),
            "absolute" => Ok(DropMode::Absolute),
            other => Err(Error::Config(format!(
                "drop mode must be relative or absolute, got {other:?}"
            ))),
        }
    }
}

/// `100·(M_in − M_xfer)/M_in`, or plain `M_in − M_xfer` points.
pub fn drop_percent(m_in: f64, m_xfer: f64, mode: DropMode) -> f64 {
    match mode {
        DropMode::Relative if m_in == 0.0 => 0.0,
        DropMode::Relative => 100.0 * (m_in - m_xfer) / m_in,
        DropMode::Absolute => m_in - m_xfer,
    }
}

/// EM and F1 (×100) of one router at one k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub k: usize,
    pub em_in: f64,
    pub em_xfer: f64,
    pub em_drop: f64,
    pub f1_in: f64,
    pub f1_xfer: f64,
    pub f1_drop: f64,
}

pub fn transfer_report(
    in_domain: &[KScore],
    transferred: &[KScore],
    mode: DropMode,
) -> Result<Vec<DropRow>> {
    transferred
        .iter()
        .map(|x| {
            let r = in_domain
                .iter()
                .find(|r| r.k == x.k)
                .ok_or_else(|| Error::data(format!("no in-domain reference at k={}", x.k)))?;
            Ok(DropRow {
                k: x.k,
                em_in: r.em,
                em_xfer: x.em,
                em_drop: drop_percent(r.em, x.em, mode),
                f1_in: r.f1,
                f1_xfer: x.f1,
                f1_drop: drop_percent(r.f1, x.f1, mode),
            })
        })
        .collect()
}

pub fn format_drop_table(title: &str, rows: &[DropRow]) -> String {
    let mut s = format!("{title}\n");
    let _ = writeln!(
        s,
        "{:>4}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
        "k", "EM_in", "EM_xfer", "EM_drop%", "F1_in", "F1_xfer", "F1_drop%"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>4}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
            r.k, r.em_in, r.em_xfer, r.em_drop, r.f1_in, r.f1_xfer, r.f1_drop
        );
    }
    s
}

pub const SWEEP_BASE_K: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub em: f64,
    pub f1: f64,
    pub em_delta: f64,
    pub f1_delta: f64,
}

/// Percentage change of each k against the k=24 row.
pub fn sweep_deltas(scores: &[KScore]) -> Result<Vec<SweepRow>> {
    let base = scores
        .iter()
        .find(|s| s.k == SWEEP_BASE_K)
        .ok_or_else(|| Error::data("sweep needs a k=24 base row"))?;
    let rel = |v: f64, b: f64| if b == 0.0 { 0.0 } else { 100.0 * (v - b) / b };
    Ok(scores
        .iter()
        .map(|s| SweepRow {
            k: s.k,
            em: s.em,
            f1: s.f1,
            em_delta: if s.k == SWEEP_BASE_K {
                0.0
            } else {
                rel(s.em, base.em)
            },
            f1_delta: if s.k == SWEEP_BASE_K {
                0.0
            } else {
                rel(s.f1, base.f1)
            },
        })
        .collect())
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4}{:>10}{:>10}{:>10}{:>10}",
        "k", "EM", "F1", "ΔEM%", "ΔF1%"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>4}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
            r.k, r.em, r.f1, r.em_delta, r.f1_delta
        );
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k,em,f1,em_delta_pct,f1_delta_pct\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.k, r.em, r.f1, r.em_delta, r.f1_delta
        );
    }
    s
}

/// Spread of cached agent quality: per-agent mean EM/F1 (×100) and the
/// across-agent mean/std per backbone and per design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub group: String,
    pub agents: usize,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub f1_min: f64,
    pub f1_max: f64,
}

pub fn variance_report(pool: &AgentPool, records: &[ScoredRecord]) -> Vec<VarianceRow> {
    let means: Vec<f64> = agent_mean_f1(records, pool.len())
        .into_iter()
        .map(|m| 100.0 * m)
        .collect();
    let row = |group: String, idx: Vec<usize>| {
        let v: Vec<f64> = idx.iter().map(|&i| means[i]).collect();
        let (m, s) = mean_std(&v);
        VarianceRow {
            group,
            agents: v.len(),
            f1_mean: m,
            f1_std: s,
            f1_min: v.iter().copied().fold(f64::INFINITY, f64::min),
            f1_max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    };
    let profiles = pool.profiles();
    let mut rows = vec![row("all".into(), (0..pool.len()).collect())];
    let mut backbones: Vec<&str> = profiles.iter().map(|p| p.backbone.as_str()).collect();
    backbones.dedup();
    backbones.sort_unstable();
    backbones.dedup();
    for b in backbones {
        let idx = (0..profiles.len())
            .filter(|&i| profiles[i].backbone == b)
            .collect();
        rows.push(row(format!("backbone:{b}"), idx));
    }
    for d in AgentDesign::ALL {
        let idx: Vec<usize> = (0..profiles.len())
            .filter(|&i| profiles[i].design == d)
            .collect();
        if !idx.is_empty() {
            rows.push(row(format!("design:{d}"), idx));
        }
    }
    for (i, p) in profiles.iter().enumerate() {
        rows.push(row(p.agent_id.clone(), vec![i]));
    }
    rows
}

pub fn format_variance(rows: &[VarianceRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<48}{:>7}{:>10}{:>10}{:>10}{:>10}",
        "group", "agents", "F1 mean", "F1 std", "F1 min", "F1 max"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<48}{:>7}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
            r.group, r.agents, r.f1_mean, r.f1_std, r.f1_min, r.f1_max
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::AgentProfile;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Devil's Hairpin"), "devils hairpin");
        assert_eq!(normalize_answer("yes"), "yes");
        assert_eq!(normalize_answer("  A  an the  "), "");
        assert_eq!(normalize_answer("theory"), "theory");
    }

    #[test]
    fn em_and_f1() {
        assert_eq!(exact_match("Gay Lawrence", &golds(&["gay lawrence"])), 1.0);
        assert_eq!(exact_match("the falcon", &golds(&["falcon"])), 1.0);
        assert_eq!(exact_match("falcon takes over", &golds(&["falcon"])), 0.0);
        assert_eq!(token_f1("falcon takes over", &golds(&["falcon"])), 0.5);
        assert_eq!(token_f1("", &golds(&["x"])), 0.0);
        assert_eq!(token_f1("the", &golds(&["a"])), 1.0);
        assert_eq!(token_f1("x y", &golds(&["z", "y x"])), 1.0);
    }

    #[test]
    fn seed_aggregation() {
        let (m, s) = mean_std(&[70.0, 71.0, 72.0]);
        assert!((m - 71.0).abs() < 1e-12);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let g = vec![golds(&["a"]), golds(&["b"])];
        let r = evaluate_method("m", "d", None, &[vec!["a".into(), "b".into()]], &g).unwrap();
        assert_eq!((r.em_mean, r.f1_mean, r.em_std), (100.0, 100.0, 0.0));
        assert!(evaluate_method("m", "d", None, &[vec!["a".into()]], &g).is_err());
    }

    #[test]
    fn drops_and_sweeps() {
        let d = drop_percent(70.0, 70.43, DropMode::Relative);
        assert_eq!(format!("{d:.2}"), "-0.61");
        assert!((drop_percent(70.0, 70.43, DropMode::Absolute) + 0.43).abs() < 1e-12);
        let s = [
            KScore {
                k: 3,
                em: 60.0,
                f1: 66.0,
            },
            KScore {
                k: 24,
                em: 50.0,
                f1: 60.0,
            },
        ];
        let rows = transfer_report(&s, &s, DropMode::Relative).unwrap();
        assert!(rows.iter().all(|r| r.em_drop == 0.0 && r.f1_drop == 0.0));
        assert!(transfer_report(&s[..1], &s, DropMode::Relative).is_err());
        let sw = sweep_deltas(&s).unwrap();
        assert_eq!((sw[1].em_delta, sw[1].f1_delta), (0.0, 0.0));
        assert!((sw[0].em_delta - 20.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_pool_baselines_coincide() {
        let pool = AgentPool::new(vec![AgentProfile::new("m", AgentDesign::Raw)]).unwrap();
        let recs: Vec<ScoredRecord> = ["a", "b", "c"]
            .iter()
            .map(|a| ScoredRecord {
                answers: vec![a.to_string()],
                missing: vec![false],
                golds: golds(&["a"]),
            })
            .collect();
        let rows = baselines(&pool, &recs, &recs, "d", 3).unwrap();
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!((r.f1_mean - rows[0].f1_mean).abs() < 1e-12, "{}", r.method);
            assert_eq!(r.seeds, 3);
        }
    }
}
