//! Soft targets, KL objective, AdamW and the early-stopped training loop.

use ndarray::{aview1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{exact_match, token_f1};
use crate::gnn::{backward, forward_pass, ModelDims, ModelParams, RoutingDistribution, Topology};
use crate::route::{top_k_clip, weighted_vote};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub probs: Vec<f64>,
    pub tau: f64,
    pub eps: f64,
}

/// `softmax(f1/τ)` mixed with the uniform distribution at weight `eps`.
pub fn soft_targets(f1: &[f64], tau: f64, eps: f64) -> Result<SoftTarget> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("eps must be in [0, 1), got {eps}")));
    }
    if f1.is_empty() {
        return Err(Error::data("soft target over zero agents"));
    }
    if let Some(bad) = f1.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::data(format!("F1 value {bad} outside [0, 1]")));
    }
    let max = f1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = f1.iter().map(|v| ((v - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let u = eps / f1.len() as f64;
    Ok(SoftTarget {
        probs: exps.iter().map(|e| (1.0 - eps) * e / z + u).collect(),
        tau,
        eps,
    })
}

/// `Σ p*·ln(p*/p)`, skipping zero-target terms.
pub fn kl_loss(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::data(format!(
            "KL between distributions of length {} and {}",
            target.len(),
            predicted.len()
        )));
    }
    Ok(target
        .iter()
        .zip(predicted)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t / p).ln())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub tau: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    /// k used when scoring the validation set after each epoch.
    pub val_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            tau: 0.25,
            eps: 1e-3,
            epochs: 20,
            seed: 0,
            hidden: 256,
            layers: 2,
            val_k: 24,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be positive");
        }
        if self.val_k == 0 {
            return bad("val_k must be positive");
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64]) {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut off = 0;
        params.for_each_mut(|_, theta| {
            for (j, p) in theta.iter_mut().enumerate() {
                let i = off + j;
                let g = grad[i];
                *p *= 1.0 - self.lr * self.weight_decay;
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            off += theta.len();
        });
    }
}

/// Scales `grad` in place so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let coef = max_norm / (norm + 1e-6);
        grad.iter_mut().for_each(|g| *g *= coef);
    }
    norm
}

/// Strict-improvement checkpoint rule: ties never replace the best.
#[derive(Debug, Clone, Default)]
pub struct EarlyStopping {
    pub best: Option<f64>,
}

impl EarlyStopping {
    pub fn observe(&mut self, val_f1: f64) -> bool {
        match self.best {
            Some(b) if val_f1 <= b => false,
            _ => {
                self.best = Some(val_f1);
                true
            }
        }
    }
}

/// One training or validation instance.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub record_id: String,
    pub topo: Topology,
    pub features: Array2<f64>,
    /// Per-agent F1 in canonical order.
    pub f1: Vec<f64>,
    pub answers: Vec<String>,
    pub golds: Vec<String>,
}

/// KL loss and its gradient for one example.
pub fn loss_and_grad(
    ex: &TrainExample,
    params: &ModelParams,
    target: &SoftTarget,
) -> Result<(f64, ModelParams, RoutingDistribution)> {
    let fp = forward_pass(&ex.topo, &ex.features, params)?;
    let loss = kl_loss(&target.probs, &fp.routing.probs)?;
    let d_scores: Vec<f64> = fp
        .routing
        .probs
        .iter()
        .zip(&target.probs)
        .map(|(p, t)| p - t)
        .collect();
    let grad = backward(&ex.topo, &ex.features, params, &fp, aview1(&d_scores))?;
    Ok((loss, grad, fp.routing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_kl: f64,
    pub val_f1: f64,
    pub val_em: f64,
    pub checkpoint_written: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_train_kl: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("log serialises") + "\n")
            .collect()
    }
}

/// Mean EM and F1 (×100) of routed answers at top-k.
pub fn evaluate_examples(
    examples: &[TrainExample],
    params: &ModelParams,
    k: usize,
) -> Result<(f64, f64)> {
    let scores = examples
        .par_iter()
        .map(|ex| {
            let fp = forward_pass(&ex.topo, &ex.features, params)?;
            let sel = top_k_clip(&fp.routing.probs, k)?;
            let answers: Vec<String> = sel.iter().map(|&(i, _)| ex.answers[i].clone()).collect();
            let weights: Vec<f64> = sel.iter().map(|&(_, w)| w).collect();
            let vote = weighted_vote(&answers, &weights)?;
            Ok((
                exact_match(&vote.winner, &ex.golds),
                token_f1(&vote.winner, &ex.golds),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    Ok((
        100.0 * scores.iter().map(|s| s.0).sum::<f64>() / n,
        100.0 * scores.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

pub fn mean_kl(
    examples: &[TrainExample],
    targets: &[SoftTarget],
    params: &ModelParams,
) -> Result<f64> {
    let losses = examples
        .par_iter()
        .zip(targets)
        .map(|(ex, t)| {
            let fp = forward_pass(&ex.topo, &ex.features, params)?;
            kl_loss(&t.probs, &fp.routing.probs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

pub struct FitOutcome {
    pub params: ModelParams,
    pub log: TrainingLog,
}

/// Trains from `ModelParams::init(config.seed, ..)`. `on_checkpoint` is called
/// with the epoch and params whenever validation F1 strictly improves.
pub fn fit(
    train: &[TrainExample],
    val: &[TrainExample],
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let d_in = train[0].features.ncols();
    let dims = ModelDims {
        d_in,
        hidden: config.hidden,
        layers: config.layers,
    };
    let mut params = ModelParams::init(config.seed, dims)?;
    let targets = train
        .iter()
        .map(|ex| soft_targets(&ex.f1, config.tau, config.eps))
        .collect::<Result<Vec<_>>>()?;
    let initial_train_kl = mean_kl(train, &targets, &params)?;
    let mut opt = AdamW::new(params.count(), config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_e90c);
    let mut stopper = EarlyStopping::default();
    let mut best = params.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grad, _) = loss_and_grad(&train[i], &params, &targets[i])?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} on record {} (param norm {:.3e})",
                    train[i].record_id,
                    params.l2_norm()
                )));
            }
            total += loss;
            let mut flat = grad.to_flat();
            clip_global_norm(&mut flat, config.clip_norm);
            opt.step(&mut params, &flat);
        }
        let (val_em, val_f1) = evaluate_examples(val, &params, config.val_k)?;
        let written = stopper.observe(val_f1);
        if written {
            best = params.clone();
            on_checkpoint(epoch, &params)?;
        }
        let entry = EpochLog {
            epoch,
            mean_train_kl: total / train.len() as f64,
            val_f1,
            val_em,
            checkpoint_written: written,
        };
        tracing::info!(
            epoch,
            kl = entry.mean_train_kl,
            val_f1,
            val_em,
            checkpoint = written,
            "epoch done"
        );
        epochs.push(entry);
    }
    Ok(FitOutcome {
        params: best,
        log: TrainingLog {
            initial_train_kl,
            epochs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_target_values() {
        let t = soft_targets(&[1.0, 0.0], 0.25, 0.0).unwrap();
        let e4 = 4f64.exp();
        assert!((t.probs[0] - e4 / (e4 + 1.0)).abs() < 1e-12);
        assert!((t.probs[1] - 1.0 / (e4 + 1.0)).abs() < 1e-12);
        let u = soft_targets(&[0.3; 5], 0.25, 1e-3).unwrap();
        assert!(u.probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
        let f1: Vec<f64> = (0..24).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let s = soft_targets(&f1, 0.25, 1e-3).unwrap();
        assert!(s.probs.iter().all(|&p| p >= 1e-3 / 24.0));
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(soft_targets(&[1.2], 0.25, 0.0).is_err());
        assert!(soft_targets(&[0.2], 0.0, 0.0).is_err());
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_loss(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let want = 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln();
        assert!((kl_loss(&[0.7, 0.3], &[0.5, 0.5]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.0823).abs() < 1e-4);
        assert!(kl_loss(&[1.0], &[0.5, 0.5]).is_err());
        assert_eq!(kl_loss(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 2f64.ln());
    }

    #[test]
    fn strict_improvement_rule() {
        let mut s = EarlyStopping::default();
        let written: Vec<bool> = [0.5, 0.5, 0.6, 0.6].iter().map(|&v| s.observe(v)).collect();
        assert_eq!(written, vec![true, false, true, false]);
    }

    #[test]
    fn clipping_contract() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n <= 1.0 + 1e-9);
        let mut small = vec![0.3, 0.4];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn adamw_one_step_by_hand() {
        let dims = ModelDims {
            d_in: 2,
            hidden: 1,
            layers: 1,
        };
        let mut p = ModelParams::init(0, dims).unwrap();
        let before = p.to_flat();
        let grad: Vec<f64> = (0..before.len()).map(|i| (i as f64 - 3.0) * 0.1).collect();
        let (lr, wd) = (0.01, 0.1);
        let mut opt = AdamW::new(before.len(), lr, wd);
        opt.step(&mut p, &grad);
        for ((th, g), new) in before.iter().zip(&grad).zip(p.to_flat()) {
            // first step: m̂ = g, v̂ = g², update = g/(|g|+eps)
            let want = th * (1.0 - lr * wd) - lr * g / (g.abs() + 1e-8);
            assert!((new - want).abs() < 1e-15, "{new} vs {want}");
        }
    }
}
