use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::text;

/// An image reference, the instruction that goes with it, and the canonical
/// object names known to be in the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneContext {
    pub image_ref: String,
    pub prompt: String,
    pub gt_objects: BTreeSet<String>,
}

impl SceneContext {
    pub fn new(
        image_ref: impl Into<String>,
        prompt: impl Into<String>,
        gt_objects: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            image_ref: image_ref.into(),
            prompt: prompt.into(),
            gt_objects: gt_objects.into_iter().map(Into::into).collect(),
        }
    }
}

/// One sentence-level action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub token_count: usize,
    pub logprob: f64,
}

impl Sentence {
    /// Builds a sentence, counting whitespace tokens. Returns `None` for
    /// blank text.
    pub fn new(text: impl Into<String>, logprob: f64) -> Option<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return None;
        }
        let token_count = trimmed.split_whitespace().count();
        Some(Self {
            text: trimmed.to_string(),
            token_count,
            logprob: logprob.min(0.0),
        })
    }

    /// Whether the text ends in one of the delimiter characters. Sentences
    /// cut off at end of input do not.
    pub fn is_terminated(&self) -> bool {
        self.text
            .trim_end_matches(text::CLOSERS)
            .ends_with(text::DELIMITERS)
    }
}

/// A proposed next sentence together with what the backend knew about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSentence {
    pub sentence: Sentence,
    /// The backend did not report a log-probability; `sentence.logprob` is 0.
    pub logprob_estimated: bool,
    /// The model stopped after this sentence.
    pub ends_response: bool,
}

/// A root-to-leaf path through a search tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: SceneContext,
    pub sentences: Vec<Sentence>,
    pub complete: bool,
    pub cumulative_q: f64,
}

impl Trajectory {
    pub fn text(&self) -> String {
        join_sentences(self.sentences.iter().map(|s| s.text.as_str()))
    }
}

/// Joins sentence texts with single spaces.
pub fn join_sentences<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for p in parts {
        let p = p.trim();
        if p.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(p);
    }
    out
}

/// Appends one sentence to a partial response.
pub fn append_sentence(prefix: &str, sentence: &str) -> String {
    join_sentences([prefix, sentence])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_counts_whitespace_tokens() {
        let s = Sentence::new("  A cat  sits. ", -1.5).unwrap();
        assert_eq!(s.text, "A cat  sits.");
        assert_eq!(s.token_count, 3);
        assert!(s.is_terminated());
        assert!(Sentence::new("   ", 0.0).is_none());
    }

    #[test]
    fn positive_logprob_is_clamped() {
        assert_eq!(Sentence::new("Hi.", 0.3).unwrap().logprob, 0.0);
    }

    #[test]
    fn join_skips_empty_parts() {
        assert_eq!(join_sentences(["", "A.", " B. "]), "A. B.");
        assert_eq!(append_sentence("", "A."), "A.");
    }
}
