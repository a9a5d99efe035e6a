//! Beam search scored by cumulative process reward: the myopic comparator
//! for tree search. No rollouts, so it cannot see a hallucination coming
//! until the sentence that contains it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::config::ConfigError;
use crate::preference::{PairSource, PreferencePair};
use crate::rewards::{Rewarder, UNINFORMATIVE_PROCESS_REWARD};
use crate::types::{append_sentence, SceneContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Candidates requested per beam per step.
    pub expansion_width: usize,
    pub max_depth: usize,
    pub temperature: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_width: 4, expansion_width: 4, max_depth: 12, temperature: 1.0 }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| Err(ConfigError::Invalid { field, reason: reason.into() });
        if self.beam_width < 2 {
            return bad("beam_width", "must be at least 2");
        }
        if self.expansion_width == 0 {
            return bad("expansion_width", "must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth", "must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub text: String,
    pub score: f64,
    pub logprob: f64,
    pub depth: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamOutcome {
    pub pair: Option<PreferencePair>,
    /// Finished beams, best first.
    pub finished: Vec<Beam>,
    /// Process-reward evaluations spent.
    pub evaluations: usize,
    /// Scores of the beams kept at each step, best first.
    pub step_scores: Vec<Vec<f64>>,
}

impl BeamOutcome {
    pub fn chosen(&self) -> Option<&Beam> {
        self.finished.first()
    }
}

fn rank(beams: &mut [Beam]) {
    // Stable: earlier expansions win exact ties.
    beams.sort_by(|a, b| b.score.total_cmp(&a.score).then(b.logprob.total_cmp(&a.logprob)));
}

pub fn beam_search_pairs<B: Backend + ?Sized>(
    ctx: &SceneContext,
    config: &BeamConfig,
    backend: &B,
    rewarder: &Rewarder,
) -> Result<BeamOutcome, BackendError> {
    config.validate().map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    let w = config.beam_width;
    let mut active = vec![Beam { text: String::new(), score: 0.0, logprob: 0.0, depth: 0, done: false }];
    let mut finished: Vec<Beam> = Vec::new();
    let mut evaluations = 0;
    let mut step_scores = Vec::new();
    while !active.is_empty() && finished.len() < w {
        let mut proposals = Vec::new();
        for b in &active {
            for c in backend.generate_candidates(ctx, &b.text, config.expansion_width, config.temperature)? {
                proposals.push((b, c));
            }
        }
        if proposals.is_empty() {
            break;
        }
        let rewards: Vec<Result<f64, BackendError>> = proposals
            .par_iter()
            .map(|(_, c)| match rewarder.process_reward(backend, ctx, &c.sentence.text) {
                Err(BackendError::Capability(_)) => Ok(UNINFORMATIVE_PROCESS_REWARD),
                other => other,
            })
            .collect();
        evaluations += proposals.len();
        let mut next = Vec::with_capacity(proposals.len());
        for ((b, c), r) in proposals.into_iter().zip(rewards) {
            let depth = b.depth + 1;
            next.push(Beam {
                text: append_sentence(&b.text, &c.sentence.text),
                score: b.score + r?,
                logprob: b.logprob + c.sentence.logprob,
                depth,
                done: c.ends_response || depth >= config.max_depth,
            });
        }
        rank(&mut next);
        next.truncate(w);
        step_scores.push(next.iter().map(|b| b.score).collect());
        active = Vec::new();
        for b in next {
            if b.done {
                finished.push(b);
            } else {
                active.push(b);
            }
        }
    }
    rank(&mut finished);
    let pair = match (finished.first(), finished.last()) {
        (Some(best), Some(worst)) if finished.len() >= 2 && best.text != worst.text => Some(PreferencePair {
            image_ref: ctx.image_ref.clone(),
            prompt: ctx.prompt.clone(),
            chosen: best.text.clone(),
            rejected: worst.text.clone(),
            source: PairSource::GlobalPath,
            depth: None,
            q_margin: best.score - worst.score,
        }),
        _ => None,
    };
    Ok(BeamOutcome { pair, finished, evaluations, step_scores })
}
