//! Sentence segmentation on terminal punctuation.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::types::Sentence;

pub const DELIMITERS: &[char] = &['.', '!', '?'];
/// Characters allowed to trail a delimiter inside the same sentence.
pub const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "approx.", "e.g.", "i.e.", "etc.", "vs.", "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "mt.",
    "jr.", "sr.", "no.", "fig.", "inc.", "ltd.", "co.", "cf.", "ca.", "al.",
];

#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    /// Abbreviations are matched case-insensitively and must include their
    /// trailing period.
    pub fn with_abbreviations<'a>(abbrevs: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            abbreviations: abbrevs.into_iter().map(|a| a.to_lowercase()).collect(),
        }
    }

    /// Splits `text` into trimmed sentence strings.
    pub fn split_str<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut out = Vec::new();
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if !DELIMITERS.contains(&c) {
                i += 1;
                continue;
            }
            let run_start = i;
            let mut j = i;
            while j < chars.len() && DELIMITERS.contains(&chars[j].1) {
                j += 1;
            }
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let at_break = j == chars.len() || chars[j].1.is_whitespace();
            let lone_period = j - run_start == 1 && c == '.';
            if at_break && !(lone_period && self.is_abbreviation(&text[start..pos + 1])) {
                let piece = text[start..end].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                start = end;
            }
            i = j.max(i + 1);
        }
        let rest = text[start..].trim();
        if !rest.is_empty() {
            out.push(rest);
        }
        out
    }

    pub fn split(&self, text: &str) -> Vec<Sentence> {
        self.split_str(text)
            .into_iter()
            .filter_map(|s| Sentence::new(s, 0.0))
            .collect()
    }

    // `upto` ends with the period under test.
    fn is_abbreviation(&self, upto: &str) -> bool {
        let word = upto
            .rsplit(char::is_whitespace)
            .next()
            .unwrap_or("")
            .trim_start_matches(|c: char| !c.is_alphanumeric());
        self.abbreviations.contains(&word.to_lowercase())
    }
}

fn default_splitter() -> &'static SentenceSplitter {
    static SPLITTER: OnceLock<SentenceSplitter> = OnceLock::new();
    SPLITTER.get_or_init(SentenceSplitter::default)
}

/// Splits with the default delimiter set and abbreviation allowlist.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    default_splitter().split(text)
}

/// Like [`split_sentences`] but returns borrowed slices.
pub fn split_sentence_strs(text: &str) -> Vec<&str> {
    default_splitter().split_str(text)
}

/// Lowercased word tokens with surrounding punctuation stripped.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|w| w.trim_matches(|c: char| c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}
