use rayon::prelude::*;

use super::similarity::{diversity_filter, BagOfWords, Similarity};
use super::tree::{priors, Node, SearchTree, ROOT};
use crate::backend::{Backend, BackendError};
use crate::config::SearchConfig;
use crate::rewards::{RewardRecord, Rewarder};
use crate::types::{append_sentence, SceneContext};

/// Temperature used when a search has to finish a path greedily.
pub const COMPLETION_TEMPERATURE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
#[error("search failed: {message}")]
pub struct SearchError {
    pub message: String,
    /// The tree as it stood when the search gave up.
    pub tree: Box<SearchTree>,
}

/// Pluggable parts of a search.
pub struct SearchOptions<'a> {
    pub rewarder: &'a Rewarder,
    pub similarity: &'a dyn Similarity,
    /// Greedily finish the best partial path when the budget ends without a
    /// complete trajectory.
    pub force_completion: bool,
}

/// Drives select, expand, evaluate and backpropagate over one tree.
pub struct Searcher<'a, B: Backend + ?Sized> {
    pub tree: SearchTree,
    backend: &'a B,
    opts: SearchOptions<'a>,
}

/// Runs a full search with the default reward settings and lexical
/// similarity.
pub fn run_search<B: Backend + ?Sized>(
    ctx: &SceneContext,
    config: &SearchConfig,
    backend: &B,
) -> Result<SearchTree, SearchError> {
    let rewarder = Rewarder::default();
    run_search_with(
        ctx,
        config,
        backend,
        SearchOptions { rewarder: &rewarder, similarity: &BagOfWords, force_completion: true },
    )
}

pub fn run_search_with<B: Backend + ?Sized>(
    ctx: &SceneContext,
    config: &SearchConfig,
    backend: &B,
    opts: SearchOptions<'_>,
) -> Result<SearchTree, SearchError> {
    let fail = |tree: SearchTree, message: String| SearchError { message, tree: Box::new(tree) };
    if let Err(e) = config.validate() {
        return Err(fail(SearchTree::new(ctx.clone(), config.clone(), backend.descriptor()), e.to_string()));
    }
    let force = opts.force_completion;
    let mut s = Searcher::new(ctx.clone(), config.clone(), backend, opts);
    for _ in 0..config.budget {
        if let Err(message) = s.iterate() {
            return Err(fail(s.tree, message));
        }
    }
    if force && s.tree.complete_leaves().is_empty() {
        if let Err(message) = s.force_completion() {
            return Err(fail(s.tree, message));
        }
    }
    Ok(s.tree)
}

impl<'a, B: Backend + ?Sized> Searcher<'a, B> {
    pub fn new(ctx: SceneContext, config: SearchConfig, backend: &'a B, opts: SearchOptions<'a>) -> Self {
        Self { tree: SearchTree::new(ctx, config, backend.descriptor()), backend, opts }
    }

    /// Descends by PUCT to a node that is terminal or not yet expanded.
    pub fn select_leaf(&self) -> usize {
        let mut id = ROOT;
        loop {
            let n = &self.tree.nodes[id];
            if n.terminal || !n.expanded {
                return id;
            }
            match self.tree.select_child(id) {
                Some(c) => id = c,
                None => return id,
            }
        }
    }

    /// One select → expand → evaluate → backpropagate pass.
    pub fn iterate(&mut self) -> Result<(), String> {
        let leaf = self.select_leaf();
        if self.tree.nodes[leaf].terminal {
            if leaf == ROOT {
                return Err("the root cannot be expanded".into());
            }
            self.evaluate(leaf);
            self.backpropagate(leaf);
            return Ok(());
        }
        match self.expand(leaf) {
            Ok(children) if !children.is_empty() => {
                self.evaluate_many(&children);
                for c in children {
                    self.backpropagate(c);
                }
                Ok(())
            }
            Ok(_) => {
                if leaf == ROOT {
                    return Err("the backend proposed no candidates for the root".into());
                }
                self.tree.nodes[leaf].terminal = true;
                self.evaluate(leaf);
                self.backpropagate(leaf);
                Ok(())
            }
            Err(e) => {
                if leaf == ROOT {
                    return Err(format!("root expansion failed: {e}"));
                }
                let n = &mut self.tree.nodes[leaf];
                n.unexpandable = true;
                n.terminal = true;
                self.backpropagate(leaf);
                Ok(())
            }
        }
    }

    /// Requests `K` candidates for `leaf`, keeps those less than `τ_sim`
    /// similar to every kept sibling, and attaches them.
    pub fn expand(&mut self, leaf: usize) -> Result<Vec<usize>, BackendError> {
        let cfg = &self.tree.config;
        let (k, temperature) = (cfg.expansion_width, cfg.temperature);
        let prefix = self.tree.nodes[leaf].text.clone();
        let cands = self.backend.generate_candidates(&self.tree.context, &prefix, k, temperature)?;
        let texts: Vec<&str> = cands.iter().map(|c| c.sentence.text.as_str()).collect();
        let kept_idx = diversity_filter(&texts, cfg.sim_threshold, self.opts.similarity);
        let kept: Vec<_> = kept_idx.into_iter().map(|i| cands[i].clone()).collect();
        let p = priors(&kept, cfg.length_penalty);
        let max_depth = cfg.max_depth;
        let depth = self.tree.nodes[leaf].depth + 1;
        let mut ids = Vec::with_capacity(kept.len());
        for (c, prior) in kept.into_iter().zip(p) {
            let id = self.tree.nodes.len();
            let terminal = c.ends_response || depth >= max_depth;
            self.tree.nodes.push(Node {
                id,
                parent: Some(leaf),
                children: Vec::new(),
                text: append_sentence(&prefix, &c.sentence.text),
                sentence: Some(c.sentence),
                depth,
                prior,
                visits: 0,
                q: 0.0,
                edge_reward: 0.0,
                v: 0.0,
                reward: None,
                rollout: None,
                expanded: false,
                terminal,
                complete: terminal,
                poisoned: false,
                unexpandable: false,
            });
            ids.push(id);
        }
        let n = &mut self.tree.nodes[leaf];
        n.expanded = true;
        n.children.extend(&ids);
        Ok(ids)
    }

    fn compute(&self, id: usize) -> Result<(String, RewardRecord), BackendError> {
        let n = &self.tree.nodes[id];
        let ctx = &self.tree.context;
        let rollout = if n.terminal {
            n.text.clone()
        } else {
            self.backend.greedy_rollout(ctx, &n.text, self.tree.config.max_depth)?
        };
        let sentence = n.sentence.as_ref().map_or("", |s| s.text.as_str());
        let record = self.opts.rewarder.node_value(self.backend, ctx, sentence, &rollout)?;
        Ok((rollout, record))
    }

    fn store(&mut self, id: usize, result: Result<(String, RewardRecord), BackendError>) {
        self.tree.evaluations += 1;
        let n = &mut self.tree.nodes[id];
        match result {
            Ok((rollout, record)) => {
                n.rollout = Some(rollout);
                n.reward = Some(record);
            }
            Err(_) => {
                n.reward = Some(RewardRecord::default());
                n.poisoned = true;
                n.terminal = true;
            }
        }
    }

    /// Rollout plus node value, cached on the node.
    pub fn evaluate(&mut self, id: usize) -> RewardRecord {
        if let Some(r) = &self.tree.nodes[id].reward {
            return r.clone();
        }
        let result = self.compute(id);
        self.store(id, result);
        self.tree.nodes[id].reward.clone().expect("just stored")
    }

    /// Evaluates fresh siblings concurrently; results are stored in id order.
    fn evaluate_many(&mut self, ids: &[usize]) {
        let todo: Vec<usize> = ids.iter().copied().filter(|&i| self.tree.nodes[i].reward.is_none()).collect();
        let this = &*self;
        let results: Vec<_> = todo.par_iter().map(|&i| this.compute(i)).collect();
        for (i, r) in todo.into_iter().zip(results) {
            self.store(i, r);
        }
    }

    /// Counts one visit along the path to `leaf` and refreshes `Q` and `V`
    /// from the leaf upward.
    pub fn backpropagate(&mut self, leaf: usize) {
        let gamma = self.tree.config.discount;
        let path = self.tree.path(leaf);
        for &id in &path {
            self.tree.nodes[id].visits += 1;
        }
        // The root starts at one visit, so it must not count twice.
        if path.len() == 1 {
            return;
        }
        let mut id = leaf;
        self.tree.nodes[id].v = self.tree.weighted_child_q(id);
        while let Some(p) = self.tree.nodes[id].parent {
            let r = self.tree.nodes[id].value() - self.tree.nodes[p].value();
            let n = &mut self.tree.nodes[id];
            n.edge_reward = r;
            n.q = r + gamma * n.v;
            self.tree.nodes[p].v = self.tree.weighted_child_q(p);
            id = p;
        }
    }

    /// Extends the highest-Q partial path one greedy sentence at a time until
    /// it is complete.
    pub fn force_completion(&mut self) -> Result<(), String> {
        let mut id = ROOT;
        loop {
            let eligible: Vec<usize> = self.tree.nodes[id]
                .children
                .iter()
                .copied()
                .filter(|&c| {
                    let n = &self.tree.nodes[c];
                    n.usable() && (!n.terminal || n.complete)
                })
                .collect();
            let Some(best) = eligible.iter().copied().reduce(|a, b| {
                if self.tree.nodes[b].q > self.tree.nodes[a].q {
                    b
                } else {
                    a
                }
            }) else {
                break;
            };
            id = best;
        }
        while !self.tree.nodes[id].complete {
            let n = &self.tree.nodes[id];
            if n.terminal || n.expanded {
                return Err(format!("no greedy completion possible from node {id}"));
            }
            let prefix = n.text.clone();
            let cands = self
                .backend
                .generate_candidates(&self.tree.context, &prefix, 1, COMPLETION_TEMPERATURE)
                .map_err(|e| format!("greedy completion failed: {e}"))?;
            let Some(first) = cands.into_iter().next() else {
                return Err(format!("greedy completion stalled at node {id}"));
            };
            let child = self.tree.nodes.len();
            let depth = self.tree.nodes[id].depth + 1;
            let terminal = first.ends_response || depth >= self.tree.config.max_depth;
            let mut node = Node::root();
            node.id = child;
            node.parent = Some(id);
            node.text = append_sentence(&prefix, &first.sentence.text);
            node.sentence = Some(first.sentence);
            node.depth = depth;
            node.visits = 0;
            node.terminal = terminal;
            node.complete = terminal;
            self.tree.nodes.push(node);
            let parent = &mut self.tree.nodes[id];
            parent.expanded = true;
            parent.children.push(child);
            self.evaluate(child);
            if self.tree.nodes[child].poisoned {
                return Err(format!("greedy completion could not evaluate node {child}"));
            }
            self.backpropagate(child);
            id = child;
        }
        Ok(())
    }
}
