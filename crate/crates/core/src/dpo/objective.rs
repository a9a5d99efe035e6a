use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::preference::{DatasetRecord, PairSource};
use crate::simulator::{SimState, SimWorld, ToyPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    /// Gradient steps per iteration.
    pub epochs: usize,
    /// Pairs per step; 0 means the full dataset.
    pub batch_size: usize,
    pub iterations: usize,
    /// Loss weight of sibling pairs relative to global pairs.
    pub sibling_weight: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            // Gradients are averaged over every scene's pairs while each
            // logit belongs to one scene, so per-logit steps are small.
            learning_rate: 50.0,
            epochs: 50,
            batch_size: 0,
            iterations: 3,
            sibling_weight: 1.0,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| Err(ConfigError::Invalid { field, reason: reason.into() });
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if !(self.sibling_weight >= 0.0 && self.sibling_weight.is_finite()) {
            return bad("sibling_weight", "must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DpoError {
    #[error("empty batch")]
    EmptyBatch,
}

/// A preference pair decomposed into per-sentence policy decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub scene: usize,
    pub chosen: Vec<(SimState, usize)>,
    pub rejected: Vec<(SimState, usize)>,
    pub weight: f64,
}

/// A dataset record the policy cannot score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub index: usize,
    pub reason: String,
}

pub fn prepare_pairs(
    world: &SimWorld,
    records: &[DatasetRecord],
    sibling_weight: f64,
) -> (Vec<TrainingPair>, Vec<SkippedPair>) {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (index, r) in records.iter().enumerate() {
        let skip = |reason: &str| SkippedPair { index, reason: reason.to_string() };
        let Some(scene) = world.scene_index(&r.image_ref) else {
            skipped.push(skip("unknown scene"));
            continue;
        };
        let chosen = ToyPolicy::decompose(world, scene, &r.chosen);
        let rejected = ToyPolicy::decompose(world, scene, &r.rejected);
        match (chosen, rejected) {
            (Some(chosen), Some(rejected)) => pairs.push(TrainingPair {
                scene,
                chosen,
                rejected,
                weight: if r.source == PairSource::Sibling { sibling_weight } else { 1.0 },
            }),
            _ => skipped.push(skip("response outside the policy's grammar")),
        }
    }
    (pairs, skipped)
}

fn seq_logprob(policy: &ToyPolicy, world: &SimWorld, scene: usize, steps: &[(SimState, usize)]) -> f64 {
    steps.iter().map(|&(s, t)| policy.template_logprob(world, scene, s, t)).sum()
}

/// `[log π(y⁺) − log π_ref(y⁺)] − [log π(y⁻) − log π_ref(y⁻)]`.
pub fn log_ratio_term(policy: &ToyPolicy, reference: &ToyPolicy, world: &SimWorld, pair: &TrainingPair) -> f64 {
    let lp = |p: &ToyPolicy, steps: &[(SimState, usize)]| seq_logprob(p, world, pair.scene, steps);
    (lp(policy, &pair.chosen) - lp(reference, &pair.chosen)) - (lp(policy, &pair.rejected) - lp(reference, &pair.rejected))
}

/// `−log σ(x)`, stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn weight_sum(batch: &[TrainingPair]) -> Result<f64, DpoError> {
    let w: f64 = batch.iter().map(|p| p.weight).sum();
    if batch.is_empty() || w <= 0.0 {
        return Err(DpoError::EmptyBatch);
    }
    Ok(w)
}

/// Weighted mean of `−log σ(β·h)`; a plain mean when all weights are 1.
pub fn dpo_loss(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    world: &SimWorld,
    batch: &[TrainingPair],
    beta: f64,
) -> Result<f64, DpoError> {
    let total = weight_sum(batch)?;
    let sum: f64 = batch
        .iter()
        .map(|p| p.weight * neg_log_sigmoid(beta * log_ratio_term(policy, reference, world, p)))
        .sum();
    Ok(sum / total)
}

/// Exact gradient of [`dpo_loss`] with respect to `policy.theta`.
pub fn dpo_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    world: &SimWorld,
    batch: &[TrainingPair],
    beta: f64,
) -> Result<Vec<f64>, DpoError> {
    let total = weight_sum(batch)?;
    let mut grad = vec![0.0; policy.theta.len()];
    for p in batch {
        let h = log_ratio_term(policy, reference, world, p);
        // d/dh −log σ(βh) = −β σ(−βh)
        let coeff = -beta * (1.0 / (1.0 + (beta * h).exp())) * p.weight / total;
        for &(s, t) in &p.chosen {
            policy.accumulate_grad(world, p.scene, s, t, coeff, &mut grad);
        }
        for &(s, t) in &p.rejected {
            policy.accumulate_grad(world, p.scene, s, t, -coeff, &mut grad);
        }
    }
    Ok(grad)
}

/// Plain gradient descent for `cfg.epochs` passes. Returns the loss before
/// training followed by the loss after each pass.
pub fn train(
    policy: &mut ToyPolicy,
    reference: &ToyPolicy,
    world: &SimWorld,
    pairs: &[TrainingPair],
    cfg: &DpoConfig,
) -> Result<Vec<f64>, DpoError> {
    let mut curve = vec![dpo_loss(policy, reference, world, pairs, cfg.beta)?];
    let size = if cfg.batch_size == 0 { pairs.len() } else { cfg.batch_size };
    for _ in 0..cfg.epochs {
        for batch in pairs.chunks(size) {
            let Ok(g) = dpo_gradient(policy, reference, world, batch, cfg.beta) else { continue };
            for (t, gi) in policy.theta.iter_mut().zip(g) {
                *t -= cfg.learning_rate * gi;
            }
        }
        curve.push(dpo_loss(policy, reference, world, pairs, cfg.beta)?);
    }
    Ok(curve)
}
