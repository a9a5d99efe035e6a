use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{discriminative_query, extract_objects, SynonymDictionary};
use crate::backend::{Backend, ChoiceQuery};
use crate::text::split_sentence_strs;
use crate::types::{join_sentences, SceneContext};

/// An object the verifier rejected, with its P("No").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub object: String,
    pub p_no: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub text: String,
    pub removed: Vec<Removal>,
    /// Objects left in place because their verification call failed.
    pub errors: Vec<String>,
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "some", "two", "three", "four", "several", "many", "another", "one",
];

/// Asks the backend "Is there a/an x in the image?" for every object the
/// caption names and removes the ones answered "No" (P(No) > 0.5).
pub fn self_verify_rewrite<B: Backend + ?Sized>(
    ctx: &SceneContext,
    caption: &str,
    backend: &B,
    dict: &SynonymDictionary,
) -> RewriteOutcome {
    let mut removed = Vec::new();
    let mut errors = Vec::new();
    for object in extract_objects(caption, dict).set() {
        let prompt = discriminative_query(&object).expect("canonical names are non-empty");
        let query = ChoiceQuery::yes_no(ctx.image_ref.clone(), prompt);
        match backend.choice_probability(&query) {
            Ok(p) => {
                let p_no = query.index_of("No").map_or(0.0, |i| p[i]);
                if p_no > 0.5 {
                    removed.push(Removal { object, p_no });
                }
            }
            Err(e) => errors.push(format!("{object}: {e}")),
        }
    }
    if removed.is_empty() {
        return RewriteOutcome { text: caption.to_string(), removed, errors };
    }
    let drop: BTreeSet<&str> = removed.iter().map(|r| r.object.as_str()).collect();
    let kept: Vec<String> = split_sentence_strs(caption)
        .into_iter()
        .filter_map(|s| rewrite_sentence(s, &drop, dict))
        .collect();
    RewriteOutcome {
        text: join_sentences(kept.iter().map(String::as_str)),
        removed,
        errors,
    }
}

/// Deletes each rejected noun phrase joined to the rest of the sentence by
/// "and" or a comma; otherwise drops the sentence. Sentences left naming no
/// object are dropped too.
fn rewrite_sentence(sentence: &str, drop: &BTreeSet<&str>, dict: &SynonymDictionary) -> Option<String> {
    let had_objects = !extract_objects(sentence, dict).is_empty();
    let mut s = sentence.to_string();
    loop {
        let ex = extract_objects(&s, dict);
        let Some(m) = ex.mentions.iter().find(|m| drop.contains(m.canonical.as_str())) else { break };
        s = cut_phrase(&s, m.start, m.end)?;
    }
    let ex = extract_objects(&s, dict);
    (!had_objects || !ex.is_empty()).then_some(s)
}

fn cut_phrase(s: &str, start: usize, end: usize) -> Option<String> {
    let mut np_start = start;
    let head = s[..start].trim_end();
    if let Some(word_start) = head.rfind(|c: char| !c.is_alphanumeric()).map(|i| i + 1).or(Some(0)) {
        let word = &head[word_start..];
        if DETERMINERS.contains(&word.to_lowercase().as_str()) {
            np_start = word_start;
        }
    }
    let before = s[..np_start].trim_end();
    let after = s[end..].trim_start();
    let joined = if let Some(b) = strip_connector_end(before) {
        join_clause(b, after)
    } else if let Some(a) = strip_connector_start(after) {
        let out = join_clause(before, a);
        if before.is_empty() { capitalize(&out) } else { out }
    } else {
        return None;
    };
    Some(joined)
}

fn strip_connector_end(before: &str) -> Option<&str> {
    let b = before.strip_suffix(',').or_else(|| {
        let low = before.to_lowercase();
        (low == "and" || low.ends_with(" and") || low.ends_with(",and")).then(|| &before[..before.len() - 3])
    })?;
    let b = b.trim_end().trim_end_matches(',').trim_end();
    (!b.is_empty()).then_some(b)
}

fn strip_connector_start(after: &str) -> Option<&str> {
    if let Some(a) = after.strip_prefix(',') {
        let a = a.trim_start();
        return Some(a.strip_prefix("and ").unwrap_or(a));
    }
    after.strip_prefix("and ").map(str::trim_start)
}

fn join_clause(a: &str, b: &str) -> String {
    if a.is_empty() {
        return b.to_string();
    }
    if b.is_empty() || b.starts_with(['.', '!', '?', ',']) {
        return format!("{a}{b}");
    }
    format!("{a} {b}")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
