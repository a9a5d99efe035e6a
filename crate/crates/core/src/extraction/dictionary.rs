use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

const COCO_TSV: &str = include_str!("../../data/coco_synonyms.tsv");

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("line {line}: expected `surface<TAB>canonical`")]
    Malformed { line: usize },
    #[error("reading dictionary: {0}")]
    Io(#[from] std::io::Error),
}

/// Surface form to canonical category map. Lookups are case-insensitive and
/// every canonical name maps to itself.
#[derive(Debug, Clone)]
pub struct SynonymDictionary {
    map: HashMap<String, String>,
    vocabulary: BTreeSet<String>,
    max_words: usize,
}

impl SynonymDictionary {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut dict = Self {
            map: HashMap::new(),
            vocabulary: BTreeSet::new(),
            max_words: 1,
        };
        for (surface, canonical) in pairs {
            dict.insert(surface, canonical);
        }
        dict
    }

    pub fn from_tsv(text: &str) -> Result<Self, DictionaryError> {
        let mut dict = Self::from_pairs([]);
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, canonical) = line
                .split_once('\t')
                .filter(|(s, c)| !s.trim().is_empty() && !c.trim().is_empty() && !c.contains('\t'))
                .ok_or(DictionaryError::Malformed { line: idx + 1 })?;
            dict.insert(surface, canonical);
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self, DictionaryError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    /// The shipped 80-category COCO-style dictionary.
    pub fn coco() -> Self {
        Self::from_tsv(COCO_TSV).expect("bundled dictionary parses")
    }

    pub fn coco_tsv() -> &'static str {
        COCO_TSV
    }

    fn insert(&mut self, surface: &str, canonical: &str) {
        let canonical = normalize(canonical);
        let surface = normalize(surface);
        self.max_words = self
            .max_words
            .max(surface.split(' ').count())
            .max(canonical.split(' ').count());
        self.map.insert(canonical.clone(), canonical.clone());
        self.map.insert(surface, canonical.clone());
        self.vocabulary.insert(canonical);
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }

    /// Exact lookup of a (possibly multi-word) surface form.
    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.map.get(&normalize(surface)).map(String::as_str)
    }

    /// Lookup that also tries singular forms of the final word.
    pub fn lookup_inflected(&self, surface: &str) -> Option<&str> {
        let norm = normalize(surface);
        if let Some(c) = self.map.get(&norm) {
            return Some(c);
        }
        let (head, last) = match norm.rsplit_once(' ') {
            Some((h, l)) => (format!("{h} "), l.to_string()),
            None => (String::new(), norm.clone()),
        };
        singular_candidates(&last)
            .into_iter()
            .find_map(|s| self.map.get(&format!("{head}{s}")))
            .map(String::as_str)
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn singular_candidates(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    if word.len() < 3 {
        return out;
    }
    if let Some(stem) = word.strip_suffix("ies") {
        out.push(format!("{stem}y"));
        return out;
    }
    if let Some(stem) = word.strip_suffix("ves") {
        out.push(format!("{stem}fe"));
        out.push(format!("{stem}f"));
    }
    if let Some(stem) = word.strip_suffix("es") {
        if ["s", "x", "z", "ch", "sh"].iter().any(|s| stem.ends_with(s)) {
            out.push(stem.to_string());
        }
    }
    if let Some(stem) = word.strip_suffix('s') {
        if !stem.ends_with('s') {
            out.push(stem.to_string());
        }
    }
    out
}
