use std::collections::BTreeMap;

use crate::text::word_tokens;

/// Sentence similarity used to drop near-duplicate expansion candidates.
pub trait Similarity: Send + Sync {
    /// A score in `[0, 1]`; 1 means duplicates.
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Cosine of lowercased bag-of-words count vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct BagOfWords;

impl Similarity for BagOfWords {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        bag_of_words_cosine(a, b)
    }
}

fn counts(text: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for w in word_tokens(text) {
        *m.entry(w).or_insert(0.0) += 1.0;
    }
    m
}

pub fn bag_of_words_cosine(a: &str, b: &str) -> f64 {
    let (ca, cb) = (counts(a), counts(b));
    match (ca.is_empty(), cb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let dot: f64 = ca.iter().filter_map(|(w, x)| cb.get(w).map(|y| x * y)).sum();
    let norm = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (norm(&ca) * norm(&cb))).clamp(0.0, 1.0)
}

/// Indices of `texts` kept by greedy filtering: each kept text is less than
/// `threshold` similar to every text kept before it. A threshold of 1 or
/// more turns the filter off.
pub fn diversity_filter(texts: &[&str], threshold: f64, sim: &dyn Similarity) -> Vec<usize> {
    if threshold >= 1.0 {
        return (0..texts.len()).collect();
    }
    let mut kept: Vec<usize> = Vec::new();
    for (i, t) in texts.iter().enumerate() {
        if kept.iter().all(|&k| sim.similarity(texts[k], t) < threshold) {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((bag_of_words_cosine("A red cat.", "a red cat") - 1.0).abs() < 1e-12);
        assert_eq!(bag_of_words_cosine("red cat", "blue dog"), 0.0);
        assert!((bag_of_words_cosine("a red cat", "a red dog") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(bag_of_words_cosine("", "..."), 1.0);
        assert_eq!(bag_of_words_cosine("", "cat"), 0.0);
    }

    #[test]
    fn duplicates_collapse_unless_threshold_is_one() {
        let t = ["A cat.", "A cat.", "A cat."];
        assert_eq!(diversity_filter(&t, 0.9, &BagOfWords), vec![0]);
        assert_eq!(diversity_filter(&t, 1.0, &BagOfWords), vec![0, 1, 2]);
    }
}
