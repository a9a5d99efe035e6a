//! Preference pairs from finished search trees, and the JSON Lines dataset
//! they are stored in.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mcts::SearchTree;
use crate::text::split_sentence_strs;

/// How a trajectory's edge Q-values reduce to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathScore {
    #[default]
    Sum,
    Leaf,
    Mean,
}

impl PathScore {
    pub fn score(self, qs: &[f64]) -> f64 {
        match self {
            PathScore::Sum => qs.iter().sum(),
            PathScore::Leaf => qs.last().copied().unwrap_or(0.0),
            PathScore::Mean if qs.is_empty() => 0.0,
            PathScore::Mean => qs.iter().sum::<f64>() / qs.len() as f64,
        }
    }
}

impl fmt::Display for PathScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathScore::Sum => "sum",
            PathScore::Leaf => "leaf",
            PathScore::Mean => "mean",
        })
    }
}

impl FromStr for PathScore {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sum" => Ok(PathScore::Sum),
            "leaf" => Ok(PathScore::Leaf),
            "mean" => Ok(PathScore::Mean),
            other => Err(format!("unknown path score `{other}` (expected sum, leaf or mean)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    GlobalPath,
    Sibling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub image_ref: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub source: PairSource,
    /// Depth of the diverging sentence; sibling pairs only.
    pub depth: Option<usize>,
    pub q_margin: f64,
}

impl PreferencePair {
    pub fn record(&self, iteration: usize) -> DatasetRecord {
        DatasetRecord {
            image_ref: self.image_ref.clone(),
            prompt: self.prompt.clone(),
            chosen: self.chosen.clone(),
            rejected: self.rejected.clone(),
            source: self.source,
            q_margin: self.q_margin,
            iteration,
        }
    }
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub image_ref: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub source: PairSource,
    pub q_margin: f64,
    pub iteration: usize,
}

/// Complete usable leaves with their path scores, in node order.
pub fn scored_leaves(tree: &SearchTree, score: PathScore) -> Vec<(usize, f64)> {
    tree.complete_leaves()
        .into_iter()
        .map(|l| (l, score.score(&tree.path_qs(l))))
        .collect()
}

/// Leaf of the best-scoring complete trajectory; the lowest id wins ties.
pub fn best_leaf(tree: &SearchTree, score: PathScore) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (l, s) in scored_leaves(tree, score) {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((l, s));
        }
    }
    best.map(|(l, _)| l)
}

/// Best versus worst complete trajectory.
pub fn global_pair(tree: &SearchTree, score: PathScore) -> Option<PreferencePair> {
    let leaves = scored_leaves(tree, score);
    if leaves.len() < 2 {
        return None;
    }
    let mut best = leaves[0];
    let mut worst = leaves[0];
    for &(l, s) in &leaves[1..] {
        if s > best.1 {
            best = (l, s);
        }
        if s < worst.1 {
            worst = (l, s);
        }
    }
    let chosen = tree.node(best.0).text.clone();
    let rejected = tree.node(worst.0).text.clone();
    if best.0 == worst.0 || chosen == rejected {
        return None;
    }
    Some(PreferencePair {
        image_ref: tree.context.image_ref.clone(),
        prompt: tree.context.prompt.clone(),
        chosen,
        rejected,
        source: PairSource::GlobalPath,
        depth: None,
        q_margin: best.1 - worst.1,
    })
}

/// Along the optimal path, each node against its lowest-Q visited sibling
/// when the Q gap is at least `q_margin`.
pub fn sibling_pairs(tree: &SearchTree, score: PathScore, q_margin: f64) -> Vec<PreferencePair> {
    let Some(leaf) = best_leaf(tree, score) else { return Vec::new() };
    let mut out = Vec::new();
    for &id in tree.path(leaf).iter().skip(1) {
        let node = tree.node(id);
        let parent = tree.node(node.parent.expect("non-root"));
        let mut worst: Option<usize> = None;
        for &s in &parent.children {
            let sib = tree.node(s);
            if s == id || sib.visits == 0 || !sib.usable() {
                continue;
            }
            if worst.map_or(true, |w| sib.q < tree.node(w).q) {
                worst = Some(s);
            }
        }
        let Some(w) = worst else { continue };
        let margin = node.q - tree.node(w).q;
        let rejected = &tree.node(w).text;
        if margin >= q_margin && *rejected != node.text {
            out.push(PreferencePair {
                image_ref: tree.context.image_ref.clone(),
                prompt: tree.context.prompt.clone(),
                chosen: node.text.clone(),
                rejected: rejected.clone(),
                source: PairSource::Sibling,
                depth: Some(node.depth),
                q_margin: margin,
            });
        }
    }
    out
}

/// The global pair, if any, followed by the sibling pairs.
pub fn extract_pairs(tree: &SearchTree, score: PathScore, q_margin: f64) -> Vec<PreferencePair> {
    let mut out: Vec<_> = global_pair(tree, score).into_iter().collect();
    out.extend(sibling_pairs(tree, score, q_margin));
    out
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_records<W: Write>(out: &mut W, records: &[DatasetRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(File::create(path)?);
    write_records(&mut out, records)?;
    out.flush()
}

/// Streams records one line at a time.
pub struct DatasetReader<R> {
    lines: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines(), line: 0 }
    }
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: self.line,
                message: e.to_string(),
            }));
        }
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    DatasetReader::open(path)?.collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintIssue {
    pub line: usize,
    pub message: String,
}

/// Dataset hygiene: chosen differs from rejected, margins are
/// non-negative, and sibling pairs meet `min_margin` and share every
/// sentence but the last byte for byte.
pub fn lint_record(line: usize, r: &DatasetRecord, min_margin: f64) -> Vec<LintIssue> {
    let mut issues = Vec::new();
    let mut flag = |m: String| issues.push(LintIssue { line, message: m });
    if r.chosen == r.rejected {
        flag("chosen equals rejected".into());
    }
    if !(r.q_margin >= 0.0) {
        flag(format!("negative or undefined q_margin {}", r.q_margin));
    }
    if r.source == PairSource::Sibling {
        if r.q_margin < min_margin {
            flag(format!("sibling q_margin {} below {min_margin}", r.q_margin));
        }
        let a = split_sentence_strs(&r.chosen);
        let b = split_sentence_strs(&r.rejected);
        if a.len() != b.len() || a.is_empty() {
            flag(format!("sibling pair diverges at different depths ({} vs {})", a.len(), b.len()));
        } else {
            let prefix = crate::types::join_sentences(a[..a.len() - 1].iter().copied());
            let shared = a[..a.len() - 1] == b[..b.len() - 1]
                && r.chosen.starts_with(&prefix)
                && r.rejected.starts_with(&prefix);
            if !shared {
                flag("sibling pair does not share its prefix".into());
            }
        }
    }
    issues
}

/// Lints a dataset file in one streaming pass.
pub fn lint_dataset(path: &Path, min_margin: f64) -> Result<(usize, Vec<LintIssue>), DatasetError> {
    let mut issues = Vec::new();
    let mut n = 0;
    for (i, rec) in DatasetReader::open(path)?.enumerate() {
        n += 1;
        match rec {
            Ok(r) => issues.extend(lint_record(i + 1, &r, min_margin)),
            Err(DatasetError::Malformed { line, message }) => issues.push(LintIssue { line, message }),
            Err(e) => return Err(e),
        }
    }
    Ok((n, issues))
}
