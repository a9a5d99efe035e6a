use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{prepare_pairs, train, SkippedPair};
use crate::config::{ConfigError, RunConfig};
use crate::mcts::{run_search, SearchTree};
use crate::preference::{extract_pairs, DatasetRecord, PairSource};
use crate::rng::StreamKey;
use crate::simulator::{distractor_mentions, SimBackend, SimWorld, ToyPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub pairs: usize,
    pub global_pairs: usize,
    pub sibling_pairs: usize,
    pub skipped: Vec<SkippedPair>,
    pub mean_q_margin: f64,
    pub failed_searches: usize,
    pub evaluations: usize,
    pub loss_curve: Vec<f64>,
    /// Share of object mentions in greedy captions that are hallucinated.
    pub hallucination_before: f64,
    pub hallucination_after: f64,
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub policy: ToyPolicy,
    pub report: IterationReport,
    pub records: Vec<DatasetRecord>,
    pub trees: Vec<SearchTree>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("iteration {iteration}: no preference pairs were extracted ({failed_searches} of {scenes} searches failed)")]
    NoPairs { iteration: usize, failed_searches: usize, scenes: usize },
}

/// One greedy caption per scene.
pub fn greedy_captions(world: &Arc<SimWorld>, policy: &ToyPolicy, max_sentences: usize) -> Vec<String> {
    let b = SimBackend::new(Arc::clone(world), Arc::new(policy.clone()), 0);
    (0..world.scenes.len())
        .map(|s| b.rollout_in_scene(s, "", max_sentences).expect("the empty prefix is always valid"))
        .collect()
}

/// Hallucinated share of all object mentions across greedy captions.
pub fn greedy_hallucination_rate(world: &Arc<SimWorld>, policy: &ToyPolicy, max_sentences: usize) -> f64 {
    let captions = greedy_captions(world, policy, max_sentences);
    let (mut bad, mut total) = (0, 0);
    for (s, c) in captions.iter().enumerate() {
        let (b, t) = distractor_mentions(world, s, std::slice::from_ref(c));
        bad += b;
        total += t;
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Freezes the reference, searches every scene with the current policy,
/// extracts pairs and trains on them. `iteration` counts from 1.
pub fn run_iteration(
    world: &Arc<SimWorld>,
    policy: &ToyPolicy,
    cfg: &RunConfig,
    iteration: usize,
) -> Result<IterationOutput, LoopError> {
    cfg.validate()?;
    let reference = policy.clone();
    let max_depth = cfg.search.max_depth;
    let before = greedy_hallucination_rate(world, &reference, max_depth);
    let seed = StreamKey::new(cfg.search.seed, "iteration").u64(iteration as u64).seed();
    let backend = SimBackend::new(Arc::clone(world), Arc::new(reference.clone()), seed);
    let results: Vec<_> = (0..world.scenes.len())
        .into_par_iter()
        .map(|s| run_search(&world.scenes[s].context, &cfg.search, &backend))
        .collect();
    let mut trees = Vec::new();
    let mut records = Vec::new();
    let mut failed = 0;
    let mut evaluations = 0;
    for r in results {
        let tree = match r {
            Ok(t) => t,
            Err(e) => {
                failed += 1;
                *e.tree
            }
        };
        evaluations += tree.evaluations;
        for p in extract_pairs(&tree, cfg.path_score, cfg.search.q_margin) {
            records.push(p.record(iteration));
        }
        trees.push(tree);
    }
    let (pairs, skipped) = prepare_pairs(world, &records, cfg.dpo.sibling_weight);
    if pairs.is_empty() {
        return Err(LoopError::NoPairs { iteration, failed_searches: failed, scenes: world.scenes.len() });
    }
    let mut next = policy.clone();
    let loss_curve = train(&mut next, &reference, world, &pairs, &cfg.dpo).expect("non-empty batch");
    let after = greedy_hallucination_rate(world, &next, max_depth);
    let mean_q_margin = records.iter().map(|r| r.q_margin).sum::<f64>() / records.len() as f64;
    let report = IterationReport {
        iteration,
        pairs: records.len(),
        global_pairs: records.iter().filter(|r| r.source == PairSource::GlobalPath).count(),
        sibling_pairs: records.iter().filter(|r| r.source == PairSource::Sibling).count(),
        skipped,
        mean_q_margin,
        failed_searches: failed,
        evaluations,
        loss_curve,
        hallucination_before: before,
        hallucination_after: after,
    };
    Ok(IterationOutput { policy: next, report, records, trees })
}

/// Runs `cfg.dpo.iterations` iterations, handing each result to `sink`
/// before starting the next. Returns the final policy.
pub fn run_loop(
    world: &Arc<SimWorld>,
    initial: ToyPolicy,
    cfg: &RunConfig,
    mut sink: impl FnMut(&IterationOutput),
) -> Result<ToyPolicy, LoopError> {
    cfg.validate()?;
    let mut policy = initial;
    for m in 1..=cfg.dpo.iterations {
        let out = run_iteration(world, &policy, cfg, m)?;
        sink(&out);
        policy = out.policy;
    }
    Ok(policy)
}
