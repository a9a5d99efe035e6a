use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{extract_objects, SynonymDictionary};
use crate::types::SceneContext;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChairError {
    #[error("{captions} captions but {contexts} contexts")]
    LengthMismatch { captions: usize, contexts: usize },
}

/// Caption-level and instance-level hallucination rates with their counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub captions: usize,
    pub hallucinated_captions: usize,
    pub mentions: usize,
    pub hallucinated_mentions: usize,
}

/// CHAIR over aligned caption/context lists. Rates over empty denominators
/// are 0.
pub fn chair(
    captions: &[impl AsRef<str>],
    contexts: &[SceneContext],
    dict: &SynonymDictionary,
) -> Result<ChairReport, ChairError> {
    if captions.len() != contexts.len() {
        return Err(ChairError::LengthMismatch {
            captions: captions.len(),
            contexts: contexts.len(),
        });
    }
    let mut hallucinated_captions = 0;
    let mut mentions = 0;
    let mut hallucinated_mentions = 0;
    for (caption, ctx) in captions.iter().zip(contexts) {
        let ex = extract_objects(caption.as_ref(), dict);
        let bad = ex
            .mentions
            .iter()
            .filter(|m| !ctx.gt_objects.contains(&m.canonical))
            .count();
        mentions += ex.len();
        hallucinated_mentions += bad;
        if bad > 0 {
            hallucinated_captions += 1;
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok(ChairReport {
        chair_s: ratio(hallucinated_captions, captions.len()),
        chair_i: ratio(hallucinated_mentions, mentions),
        captions: captions.len(),
        hallucinated_captions,
        mentions,
        hallucinated_mentions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_corpus_scores_zero() {
        let d = SynonymDictionary::coco();
        let ctx = vec![SceneContext::new("i0", "p", ["cat", "couch"])];
        let r = chair(&["A cat sits on a sofa."], &ctx, &d).unwrap();
        assert_eq!((r.chair_s, r.chair_i), (0.0, 0.0));
        assert_eq!(r.mentions, 2);
    }

    #[test]
    fn counting_by_definition() {
        let d = SynonymDictionary::coco();
        let ctx = vec![
            SceneContext::new("i0", "p", ["cat"]),
            SceneContext::new("i1", "p", ["dog", "car"]),
        ];
        let r = chair(&["A cat and a dog.", "A dog near a car."], &ctx, &d).unwrap();
        assert_eq!(r.chair_s, 0.5);
        assert_eq!(r.chair_i, 0.25);
        assert_eq!((r.hallucinated_captions, r.hallucinated_mentions, r.mentions), (1, 1, 4));
    }

    #[test]
    fn length_mismatch() {
        let d = SynonymDictionary::coco();
        let err = chair(&["x"], &[], &d).unwrap_err();
        assert_eq!(err, ChairError::LengthMismatch { captions: 1, contexts: 0 });
    }

    #[test]
    fn no_mentions_means_zero_rates() {
        let d = SynonymDictionary::coco();
        let r = chair(&["Nothing here."], &[SceneContext::new("i", "p", ["cat"])], &d).unwrap();
        assert_eq!((r.chair_s, r.chair_i), (0.0, 0.0));
    }
}
