//! Node-level process reward, trajectory-level gated outcome reward, and the
//! value that combines them.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{verification_prompt, Backend, BackendError, ChoiceQuery, VERIFICATION_TEMPLATE};
use crate::extraction::{extract_objects, SynonymDictionary};
use crate::types::SceneContext;

/// Process reward substituted when the backend cannot report choice
/// probabilities.
pub const UNINFORMATIVE_PROCESS_REWARD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RewardRecord {
    pub r_proc: f64,
    pub gate: u8,
    pub score_quality: f64,
    pub r_out: f64,
    pub value: f64,
    /// The rollout named no object, so it passed the gate vacuously.
    pub zero_objects: bool,
    /// `r_proc` is the uninformative fallback.
    pub proc_fallback: bool,
    /// The quality reply could not be parsed; `r_out` is 0.
    pub score_error: bool,
}

/// Gate, quality score, and outcome reward of one rollout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeReward {
    pub gate: u8,
    pub score_quality: f64,
    pub r_out: f64,
    pub zero_objects: bool,
    pub score_error: bool,
}

/// 1 iff every response object is a ground-truth object.
pub fn gate(response_objects: &BTreeSet<String>, gt_objects: &BTreeSet<String>) -> u8 {
    u8::from(response_objects.is_subset(gt_objects))
}

/// Reward computation settings shared by every node of a search.
#[derive(Debug, Clone)]
pub struct Rewarder {
    pub dict: Arc<SynonymDictionary>,
    pub verification_template: String,
}

impl Default for Rewarder {
    fn default() -> Self {
        Self::new(Arc::new(SynonymDictionary::coco()))
    }
}

impl Rewarder {
    pub fn new(dict: Arc<SynonymDictionary>) -> Self {
        Self { dict, verification_template: VERIFICATION_TEMPLATE.to_string() }
    }

    /// P("No") to "does this sentence mention absent objects?".
    pub fn process_reward<B: Backend + ?Sized>(
        &self,
        backend: &B,
        ctx: &SceneContext,
        sentence: &str,
    ) -> Result<f64, BackendError> {
        let query = ChoiceQuery::yes_no(
            ctx.image_ref.clone(),
            verification_prompt(&self.verification_template, sentence),
        );
        let probs = backend.choice_probability(&query)?;
        let no = query.index_of("No").expect("yes/no query has a No choice");
        Ok(probs[no].clamp(0.0, 1.0))
    }

    /// Gated outcome reward. The quality score is requested only when the
    /// gate passes; an unparseable score counts as 0.
    pub fn outcome_reward<B: Backend + ?Sized>(
        &self,
        backend: &B,
        ctx: &SceneContext,
        rollout: &str,
    ) -> Result<OutcomeReward, BackendError> {
        let objects = extract_objects(rollout, &self.dict).set();
        let g = gate(&objects, &ctx.gt_objects);
        let mut out = OutcomeReward { gate: g, zero_objects: objects.is_empty(), ..Default::default() };
        if g == 0 || rollout.trim().is_empty() {
            return Ok(out);
        }
        match backend.quality_score(ctx, rollout) {
            Ok(score) => {
                out.score_quality = score.clamp(0.0, 10.0);
                out.r_out = out.score_quality / 10.0;
            }
            Err(BackendError::Scoring { .. }) => out.score_error = true,
            Err(e) => return Err(e),
        }
        Ok(out)
    }

    /// `r_proc(sentence) + r_out(rollout)`, with the full record for audit.
    pub fn node_value<B: Backend + ?Sized>(
        &self,
        backend: &B,
        ctx: &SceneContext,
        sentence: &str,
        rollout: &str,
    ) -> Result<RewardRecord, BackendError> {
        let (r_proc, proc_fallback) = match self.process_reward(backend, ctx, sentence) {
            Ok(p) => (p, false),
            Err(BackendError::Capability(_)) => (UNINFORMATIVE_PROCESS_REWARD, true),
            Err(e) => return Err(e),
        };
        let out = self.outcome_reward(backend, ctx, rollout)?;
        Ok(combine(r_proc, &out, proc_fallback))
    }
}

pub fn combine(r_proc: f64, out: &OutcomeReward, proc_fallback: bool) -> RewardRecord {
    RewardRecord {
        r_proc,
        gate: out.gate,
        score_quality: out.score_quality,
        r_out: out.r_out,
        value: r_proc + out.r_out,
        zero_objects: out.zero_objects,
        proc_fallback,
        score_error: out.score_error,
    }
}

/// One line of the reward audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub node: usize,
    pub sentence: String,
    pub r_proc: f64,
    pub gate: u8,
    pub score: f64,
    pub value: f64,
}

/// Writes one JSON object per evaluated node.
pub fn write_audit<W: Write>(out: &mut W, entries: &[AuditEntry]) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
