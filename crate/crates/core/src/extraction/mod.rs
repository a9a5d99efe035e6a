//! Object mention extraction, CHAIR metrics, and self-verification rewrites.

mod chair;
mod dictionary;
mod rewrite;

use std::collections::{BTreeMap, BTreeSet};

pub use chair::{chair, ChairError, ChairReport};
pub use dictionary::{DictionaryError, SynonymDictionary};
pub use rewrite::{self_verify_rewrite, Removal, RewriteOutcome};

/// One dictionary match in a text, with byte offsets into that text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub canonical: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub mentions: Vec<Mention>,
}

impl Extraction {
    pub fn set(&self) -> BTreeSet<String> {
        self.mentions.iter().map(|m| m.canonical.clone()).collect()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for m in &self.mentions {
            *out.entry(m.canonical.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }
}

fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let is_word = c.is_alphanumeric() || c == '\'' || c == '-';
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
        .into_iter()
        .filter_map(|(s, e)| {
            let w = &text[s..e];
            let lead = w.len() - w.trim_start_matches(['\'', '-']).len();
            let trail = w.len() - w.trim_end_matches(['\'', '-']).len();
            (s + lead < e - trail).then_some((s + lead, e - trail))
        })
        .collect()
}

/// Finds dictionary objects in `text`, preferring the longest multi-word
/// surface form at each position. Words that match nothing are skipped.
pub fn extract_objects(text: &str, dict: &SynonymDictionary) -> Extraction {
    let spans = word_spans(text);
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < spans.len() {
        let mut matched = None;
        for n in (1..=dict.max_words().min(spans.len() - i)).rev() {
            let phrase = spans[i..i + n]
                .iter()
                .map(|&(s, e)| &text[s..e])
                .collect::<Vec<_>>()
                .join(" ");
            if let Some(canonical) = dict.lookup_inflected(&phrase) {
                matched = Some((n, canonical.to_string()));
                break;
            }
        }
        match matched {
            Some((n, canonical)) => {
                mentions.push(Mention {
                    canonical,
                    start: spans[i].0,
                    end: spans[i + n - 1].1,
                });
                i += n;
            }
            None => i += 1,
        }
    }
    Extraction { mentions }
}

/// Words whose article is not predicted by their first letter.
const ARTICLE_EXCEPTIONS: &[(&str, &str)] = &[
    ("hour", "an"),
    ("honest", "an"),
    ("heir", "an"),
    ("one", "a"),
    ("once", "a"),
    ("unicorn", "a"),
    ("uniform", "a"),
    ("university", "a"),
    ("utensil", "a"),
    ("user", "a"),
    ("european", "a"),
    ("ewe", "a"),
];

/// Indefinite article for a noun phrase, by leading vowel sound.
pub fn indefinite_article(phrase: &str) -> &'static str {
    let first = phrase.split_whitespace().next().unwrap_or("").to_lowercase();
    if let Some((_, a)) = ARTICLE_EXCEPTIONS.iter().find(|(w, _)| *w == first) {
        return a;
    }
    match first.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("object name must be non-empty")]
pub struct EmptyObjectName;

/// The presence probe, using the literal `a/an` form.
pub fn discriminative_query(object: &str) -> Result<String, EmptyObjectName> {
    let object = object.trim();
    if object.is_empty() {
        return Err(EmptyObjectName);
    }
    Ok(format!("Is there a/an {object} in the image?"))
}

/// The presence probe with the article resolved for `object`.
pub fn discriminative_query_resolved(object: &str) -> Result<String, EmptyObjectName> {
    let object = object.trim();
    if object.is_empty() {
        return Err(EmptyObjectName);
    }
    Ok(format!("Is there {} {object} in the image?", indefinite_article(object)))
}

/// Recovers the object from either form of the presence probe.
pub fn parse_discriminative_query(prompt: &str) -> Option<&str> {
    let rest = prompt.trim().strip_prefix("Is there ")?;
    let rest = ["a/an ", "an ", "a "]
        .iter()
        .find_map(|a| rest.strip_prefix(a))?;
    rest.strip_suffix(" in the image?").map(str::trim)
}
