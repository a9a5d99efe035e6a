use serde::{Deserialize, Serialize};

use crate::config::SearchConfig;
use crate::rewards::{AuditEntry, RewardRecord};
use crate::rng::sha256_hex;
use crate::types::{CandidateSentence, SceneContext, Sentence, Trajectory};

pub const ROOT: usize = 0;

/// One sentence-level state. Edge statistics `N(s,a)`, `Q(s,a)` and the
/// prior live on the child they lead to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// The action that produced this state; `None` at the root.
    pub sentence: Option<Sentence>,
    /// Full partial response.
    pub text: String,
    pub depth: usize,
    pub prior: f64,
    pub visits: u64,
    pub q: f64,
    pub edge_reward: f64,
    pub v: f64,
    pub reward: Option<RewardRecord>,
    pub rollout: Option<String>,
    pub expanded: bool,
    pub terminal: bool,
    /// Ends with an end-of-response sentence or sits at `max_depth`.
    pub complete: bool,
    /// Evaluation failed; value pinned to 0.
    pub poisoned: bool,
    /// Candidate generation failed after retries.
    pub unexpandable: bool,
}

impl Node {
    pub fn root() -> Self {
        Self {
            id: ROOT,
            parent: None,
            children: Vec::new(),
            sentence: None,
            text: String::new(),
            depth: 0,
            prior: 1.0,
            visits: 1,
            q: 0.0,
            edge_reward: 0.0,
            v: 0.0,
            reward: None,
            rollout: None,
            expanded: false,
            terminal: false,
            complete: false,
            poisoned: false,
            unexpandable: false,
        }
    }

    /// The dual-granularity value of this state; 0 at the root and for
    /// unevaluated nodes.
    pub fn value(&self) -> f64 {
        if self.parent.is_none() {
            return 0.0;
        }
        self.reward.as_ref().map_or(0.0, |r| r.value)
    }

    /// Usable as a preference-pair endpoint.
    pub fn usable(&self) -> bool {
        !self.poisoned && !self.unexpandable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub context: SceneContext,
    pub config: SearchConfig,
    pub backend: String,
    pub nodes: Vec<Node>,
    /// Nodes whose reward was computed with backend calls.
    pub evaluations: usize,
}

/// Length-penalised prior `exp(lp) / tokens^λ`, normalised over siblings.
/// Computed in log space.
pub fn priors(candidates: &[CandidateSentence], length_penalty: f64) -> Vec<f64> {
    let logits: Vec<f64> = candidates
        .iter()
        .map(|c| c.sentence.logprob - length_penalty * (c.sentence.token_count.max(1) as f64).ln())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / candidates.len() as f64; candidates.len()];
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn puct_score(q: f64, prior: f64, parent_visits: u64, edge_visits: u64, c_puct: f64) -> f64 {
    q + c_puct * prior * (parent_visits as f64).sqrt() / (1.0 + edge_visits as f64)
}

/// Index of the PUCT-maximising edge; the lowest index wins ties.
pub fn puct_argmax(q: &[f64], prior: &[f64], edge_visits: &[u64], parent_visits: u64, c_puct: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..q.len() {
        let s = puct_score(q[i], prior[i], parent_visits, edge_visits[i], c_puct);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

impl SearchTree {
    pub fn new(context: SceneContext, config: SearchConfig, backend: String) -> Self {
        Self { context, config, backend, nodes: vec![Node::root()], evaluations: 0 }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[ROOT]
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    /// The child of `id` that PUCT selects.
    pub fn select_child(&self, id: usize) -> Option<usize> {
        let n = &self.nodes[id];
        let kids = &n.children;
        let q: Vec<f64> = kids.iter().map(|&c| self.nodes[c].q).collect();
        let p: Vec<f64> = kids.iter().map(|&c| self.nodes[c].prior).collect();
        let v: Vec<u64> = kids.iter().map(|&c| self.nodes[c].visits).collect();
        puct_argmax(&q, &p, &v, n.visits, self.config.c_puct).map(|i| kids[i])
    }

    /// Root-first ids from the root to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Edge Q-values from the root to `id`.
    pub fn path_qs(&self, id: usize) -> Vec<f64> {
        self.path(id).into_iter().skip(1).map(|n| self.nodes[n].q).collect()
    }

    /// Leaves of complete trajectories whose whole path is usable.
    pub fn complete_leaves(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.complete && n.usable())
            .filter(|n| self.path(n.id).iter().all(|&p| self.nodes[p].usable()))
            .map(|n| n.id)
            .collect()
    }

    pub fn trajectory(&self, leaf: usize) -> Trajectory {
        let path = self.path(leaf);
        Trajectory {
            context: self.context.clone(),
            sentences: path.iter().filter_map(|&p| self.nodes[p].sentence.clone()).collect(),
            complete: self.nodes[leaf].complete,
            cumulative_q: self.path_qs(leaf).iter().sum(),
        }
    }

    /// Recomputes `V(id)` as the visit-weighted mean of visited children's Q.
    pub fn weighted_child_q(&self, id: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &c in &self.nodes[id].children {
            let n = self.nodes[c].visits as f64;
            if n > 0.0 {
                num += n * self.nodes[c].q;
                den += n;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Checks visit conservation, V consistency, Q consistency, finiteness
    /// and the depth bound.
    pub fn check_invariants(&self, tol: f64) -> Result<(), String> {
        for n in &self.nodes {
            if n.depth > self.config.max_depth {
                return Err(format!("node {} deeper than max_depth", n.id));
            }
            if !n.q.is_finite() || !n.v.is_finite() {
                return Err(format!("node {} has non-finite statistics", n.id));
            }
            if !n.children.is_empty() {
                let sum: u64 = n.children.iter().map(|&c| self.nodes[c].visits).sum();
                if n.visits != sum + 1 {
                    return Err(format!("node {}: N = {} but 1 + sum N(s,a) = {}", n.id, n.visits, sum + 1));
                }
            }
            let v = self.weighted_child_q(n.id);
            if (n.v - v).abs() > tol {
                return Err(format!("node {}: V = {} but weighted child Q = {}", n.id, n.v, v));
            }
            if let Some(p) = n.parent {
                if n.visits > 0 {
                    let r = n.value() - self.nodes[p].value();
                    let q = r + self.config.discount * n.v;
                    if (n.q - q).abs() > tol {
                        return Err(format!("node {}: Q = {} but r + gamma V = {}", n.id, n.q, q));
                    }
                }
                if self.nodes[p].children.iter().all(|&c| c != n.id) {
                    return Err(format!("node {} missing from its parent's children", n.id));
                }
            }
        }
        Ok(())
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.nodes
            .iter()
            .filter_map(|n| {
                let r = n.reward.as_ref()?;
                Some(AuditEntry {
                    node: n.id,
                    sentence: n.sentence.as_ref().map(|s| s.text.clone()).unwrap_or_default(),
                    r_proc: r.r_proc,
                    gate: r.gate,
                    score: r.score_quality,
                    value: r.value,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// SHA-256 of the JSON dump.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}
