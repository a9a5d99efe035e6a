//! The model-capability interface and its remote implementation.
//!
//! Every consumer of model output (rewards, search, beam baseline,
//! self-verification) talks to a [`Backend`]. Implementations must be safe
//! to call from several threads at once.

pub mod remote;
pub mod stub;
pub mod wire;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CandidateSentence, SceneContext};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// The request never got a usable answer. Safe to retry.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The endpoint answered with something we cannot interpret.
    #[error("protocol error: {message}")]
    Protocol { message: String, raw: String },
    /// The backend cannot provide what was asked (e.g. log-probabilities).
    #[error("capability missing: {0}")]
    Capability(String),
    /// A quality reply contained no usable number.
    #[error("unparseable score reply: {reply:?}")]
    Scoring { reply: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// What the engine asks a generator for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub image_ref: String,
    pub prompt_text: String,
    pub prefix: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub want_logprobs: bool,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n == 0 {
            return Err(BackendError::InvalidRequest("n must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedText {
    pub text: String,
    /// `None` when the backend does not report log-probabilities.
    pub sum_logprob: Option<f64>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub candidates: Vec<GeneratedText>,
    pub model_id: String,
}

/// A multiple-choice question about an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceQuery {
    pub image_ref: String,
    pub prompt_text: String,
    pub choices: Vec<String>,
}

impl ChoiceQuery {
    pub fn yes_no(image_ref: impl Into<String>, prompt_text: impl Into<String>) -> Self {
        Self {
            image_ref: image_ref.into(),
            prompt_text: prompt_text.into(),
            choices: vec!["Yes".into(), "No".into()],
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.choices.len() < 2 {
            return Err(BackendError::InvalidRequest("need at least two choices".into()));
        }
        for (i, c) in self.choices.iter().enumerate() {
            if self.choices[..i].contains(c) {
                return Err(BackendError::InvalidRequest(format!("duplicate choice {c:?}")));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, choice: &str) -> Option<usize> {
        self.choices.iter().position(|c| c.eq_ignore_ascii_case(choice))
    }
}

/// Model capabilities used by the engine.
pub trait Backend: Send + Sync {
    /// Short human-readable description, recorded in run manifests.
    fn descriptor(&self) -> String;

    /// Up to `k` single-sentence continuations of `prefix`.
    fn generate_candidates(
        &self,
        ctx: &SceneContext,
        prefix: &str,
        k: usize,
        temperature: f64,
    ) -> Result<Vec<CandidateSentence>, BackendError>;

    /// Probability of each choice, renormalised over the given choices.
    fn choice_probability(&self, query: &ChoiceQuery) -> Result<Vec<f64>, BackendError>;

    /// Greedy continuation of `prefix` to a terminal state, never exceeding
    /// `max_sentences` sentences in total. Returns the full response text.
    fn greedy_rollout(
        &self,
        ctx: &SceneContext,
        prefix: &str,
        max_sentences: usize,
    ) -> Result<String, BackendError>;

    /// Overall caption quality on a 0–10 scale.
    fn quality_score(&self, ctx: &SceneContext, caption: &str) -> Result<f64, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
    fn generate_candidates(&self, ctx: &SceneContext, prefix: &str, k: usize, t: f64) -> Result<Vec<CandidateSentence>, BackendError> {
        (**self).generate_candidates(ctx, prefix, k, t)
    }
    fn choice_probability(&self, q: &ChoiceQuery) -> Result<Vec<f64>, BackendError> {
        (**self).choice_probability(q)
    }
    fn greedy_rollout(&self, ctx: &SceneContext, prefix: &str, max: usize) -> Result<String, BackendError> {
        (**self).greedy_rollout(ctx, prefix, max)
    }
    fn quality_score(&self, ctx: &SceneContext, caption: &str) -> Result<f64, BackendError> {
        (**self).quality_score(ctx, caption)
    }
}

pub const VERIFICATION_TEMPLATE: &str = "<image> Please determine if the following sentence mentions objects that are not present in the image: {sentence}\nAnswer Choices: (A) Yes (B) No";

pub const QUALITY_TEMPLATE: &str = "<image> Please evaluate the following caption on three dimensions: logical consistency, linguistic fluency, and redundancy.\nCaption: {caption}\nPlease provide a single overall score from 0 to 10, where 0 is extremely poor and 10 is excellent.";

pub fn verification_prompt(template: &str, sentence: &str) -> String {
    template.replace("{sentence}", sentence)
}

pub fn quality_prompt(caption: &str) -> String {
    QUALITY_TEMPLATE.replace("{caption}", caption)
}

/// Inverse of [`quality_prompt`].
pub fn parse_quality_prompt(prompt: &str) -> Option<&str> {
    let (head, tail) = QUALITY_TEMPLATE.split_once("{caption}")?;
    prompt.strip_prefix(head)?.strip_suffix(tail)
}

/// First decimal number in `reply`, clamped to `[0, 10]`.
pub fn parse_score(reply: &str) -> Result<f64, BackendError> {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?|\.\d+").expect("valid regex"));
    re.find(reply)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .map(|v| v.clamp(0.0, 10.0))
        .ok_or_else(|| BackendError::Scoring { reply: reply.to_string() })
}

/// Turns per-choice log-probabilities into a distribution over the choices.
/// Entries of `None` get probability 0.
pub fn renormalize_logprobs(logprobs: &[Option<f64>]) -> Result<Vec<f64>, BackendError> {
    let max = logprobs
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(BackendError::Protocol {
            message: "no choice received a finite log-probability".into(),
            raw: String::new(),
        });
    }
    let weights: Vec<f64> = logprobs
        .iter()
        .map(|lp| lp.map_or(0.0, |lp| (lp - max).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Number of samples used by [`sampled_vote`] when log-probabilities are
/// unavailable.
pub const VOTE_SAMPLES: usize = 16;

/// Estimates choice probabilities from sampled answers: the share of samples
/// matching each choice. Unmatched samples are ignored.
pub fn sampled_vote(query: &ChoiceQuery, answers: &[String]) -> Result<Vec<f64>, BackendError> {
    let mut counts = vec![0usize; query.choices.len()];
    for a in answers {
        if let Some(i) = match_choice(query, a) {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(BackendError::Protocol {
            message: "no sampled answer matched a choice".into(),
            raw: answers.join("\n"),
        });
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Maps an answer like `"No"`, `"(B)"`, or `"B. No"` onto a choice index.
pub fn match_choice(query: &ChoiceQuery, answer: &str) -> Option<usize> {
    let a = answer.trim();
    if let Some(i) = query.index_of(a.trim_end_matches(['.', '!'])) {
        return Some(i);
    }
    let letter = a
        .trim_start_matches('(')
        .chars()
        .next()
        .filter(|c| c.is_ascii_uppercase())?;
    let rest = &a.trim_start_matches('(')[1..];
    if !(rest.is_empty() || rest.starts_with([')', '.', ' ', ':'])) {
        return None;
    }
    let idx = (letter as u8 - b'A') as usize;
    (idx < query.choices.len()).then_some(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("8").unwrap(), 8.0);
        assert_eq!(parse_score("Score: 7.5/10 because it is fine").unwrap(), 7.5);
        assert_eq!(parse_score("I'd say 12 out of 10").unwrap(), 10.0);
        assert!(matches!(parse_score("excellent"), Err(BackendError::Scoring { .. })));
    }

    #[test]
    fn two_choice_renormalization() {
        let p = renormalize_logprobs(&[Some(-1.0), Some(-1.0)]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = renormalize_logprobs(&[Some(-2.0), None]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(renormalize_logprobs(&[None, None]).is_err());
    }

    #[test]
    fn renormalized_is_distribution() {
        let p = renormalize_logprobs(&[Some(-0.1), Some(-3.0), Some(-700.0)]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn choice_matching() {
        let q = ChoiceQuery::yes_no("i", "p");
        assert_eq!(match_choice(&q, " no."), Some(1));
        assert_eq!(match_choice(&q, "(A)"), Some(0));
        assert_eq!(match_choice(&q, "B. No"), Some(1));
        assert_eq!(match_choice(&q, "C"), None);
        assert_eq!(match_choice(&q, "Banana"), None);
    }

    #[test]
    fn votes() {
        let q = ChoiceQuery::yes_no("i", "p");
        let answers: Vec<String> = ["Yes", "No", "No", "No", "maybe"].iter().map(|s| s.to_string()).collect();
        assert_eq!(sampled_vote(&q, &answers).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn query_validation() {
        assert!(ChoiceQuery::yes_no("i", "p").validate().is_ok());
        let mut q = ChoiceQuery::yes_no("i", "p");
        q.choices = vec!["Yes".into()];
        assert!(q.validate().is_err());
        q.choices = vec!["Yes".into(), "Yes".into()];
        assert!(q.validate().is_err());
    }

    #[test]
    fn prompts_round_trip() {
        let p = quality_prompt("A cat. A dog.");
        assert_eq!(parse_quality_prompt(&p), Some("A cat. A dog."));
        assert!(verification_prompt(VERIFICATION_TEMPLATE, "A cat.").contains("image: A cat.\n"));
    }
}
