use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::backend::{Backend, BackendError, ChoiceQuery};
use crate::config::SearchConfig;
use crate::rewards::{RewardRecord, Rewarder};
use crate::simulator::{SimBackend, SimWorld, ToyPolicy, WorldConfig};
use crate::types::{CandidateSentence, SceneContext, Sentence};

fn cand(text: &str, logprob: f64) -> CandidateSentence {
    CandidateSentence {
        sentence: Sentence::new(text, logprob).unwrap(),
        logprob_estimated: false,
        ends_response: false,
    }
}

fn sim(seed: u64, d: f64) -> (SimWorld, SimBackend) {
    let w = SimWorld::generate(WorldConfig { seed, scenes: 5, verifier_accuracy: d, ..WorldConfig::default() }).unwrap();
    let p = ToyPolicy::initial(&w, 12, seed);
    let b = SimBackend::new(Arc::new(w.clone()), Arc::new(p), seed);
    (w, b)
}

#[test]
fn prior_examples() {
    let p = priors(&[cand("a.", -1.0), cand("a b.", -1.0)], 1.0);
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
    let p = priors(&[cand("a b c.", (0.2f64).ln()), cand("a.", (0.6f64).ln())], 0.0);
    assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
}

#[test]
fn puct_examples() {
    assert_eq!(puct_argmax(&[0.5, 0.5, 0.5], &[0.2, 0.5, 0.3], &[0, 0, 0], 1, 1.0), Some(1));
    assert_eq!(puct_argmax(&[0.1, 0.7, 0.3], &[0.9, 0.05, 0.05], &[3, 3, 3], 10, 0.0), Some(1));
    assert_eq!(puct_argmax(&[0.4, 0.4], &[0.5, 0.5], &[1, 1], 3, 1.0), Some(0));
    assert_eq!(puct_argmax(&[], &[], &[], 1, 1.0), None);
}

#[test]
fn backprop_chain_example() {
    let ctx = SceneContext::new("img", "p", ["cat"]);
    let cfg = SearchConfig::default();
    let (_, b) = sim(1, 0.9);
    let rewarder = Rewarder::default();
    let mut s = Searcher::new(ctx, cfg, &b, SearchOptions { rewarder: &rewarder, similarity: &BagOfWords, force_completion: false });
    let mk = |id, parent, value: f64| {
        let mut n = Node::root();
        n.id = id;
        n.parent = Some(parent);
        n.visits = 0;
        n.reward = Some(RewardRecord { value, ..Default::default() });
        n
    };
    s.tree.nodes.push(mk(1, 0, 0.3));
    s.tree.nodes.push(mk(2, 1, 0.8));
    s.tree.nodes[0].children.push(1);
    s.tree.nodes[1].children.push(2);
    s.tree.nodes[0].expanded = true;
    s.tree.nodes[1].expanded = true;
    s.backpropagate(1);
    s.backpropagate(2);
    let leaf = &s.tree.nodes[2];
    assert!((leaf.edge_reward - 0.5).abs() < 1e-12);
    assert!((leaf.q - (0.5 + leaf.v)).abs() < 1e-12);
    let mid = &s.tree.nodes[1];
    assert!((mid.v - 0.5).abs() < 1e-12);
    assert!((mid.q - (0.3 + 0.5)).abs() < 1e-12);
    assert_eq!((s.tree.nodes[0].visits, mid.visits, leaf.visits), (3, 2, 1));
    s.tree.check_invariants(1e-12).unwrap();
}

#[test]
fn zero_discount_makes_q_the_immediate_reward() {
    let (w, b) = sim(3, 0.9);
    let cfg = SearchConfig { discount: 0.0, budget: 20, ..SearchConfig::default() };
    let t = run_search(&w.scenes[0].context, &cfg, &b).unwrap();
    for n in t.nodes.iter().skip(1).filter(|n| n.visits > 0) {
        assert_eq!(n.q, n.edge_reward);
    }
}

#[test]
fn budget_one_expands_only_the_root() {
    let (w, b) = sim(2, 0.9);
    let cfg = SearchConfig { budget: 1, max_depth: 1, ..SearchConfig::default() };
    let t = run_search(&w.scenes[0].context, &cfg, &b).unwrap();
    assert_eq!(t.nodes.len(), 1 + t.root().children.len());
    assert!(t.nodes.iter().skip(1).all(|n| n.children.is_empty() && n.complete));
    assert_eq!(t.root().visits, 1 + t.root().children.len() as u64);
}

#[test]
fn searches_are_deterministic_and_consistent() {
    let (w, b) = sim(4, 0.9);
    let cfg = SearchConfig { seed: 4, ..SearchConfig::default() };
    let a = run_search(&w.scenes[1].context, &cfg, &b).unwrap();
    let c = run_search(&w.scenes[1].context, &cfg, &b).unwrap();
    assert_eq!(a.digest(), c.digest());
    a.check_invariants(1e-9).unwrap();
    assert!(!a.complete_leaves().is_empty());
    assert_eq!(SearchTree::from_json(&a.to_json()).unwrap(), a);
}

#[test]
fn kept_siblings_are_dissimilar_and_depth_is_bounded() {
    let (w, b) = sim(5, 0.9);
    let cfg = SearchConfig { max_depth: 5, sim_threshold: 0.6, ..SearchConfig::default() };
    let t = run_search(&w.scenes[2].context, &cfg, &b).unwrap();
    for n in &t.nodes {
        assert!(n.depth <= 5);
        for (i, &a) in n.children.iter().enumerate() {
            for &c in &n.children[i + 1..] {
                let (x, y) = (&t.nodes[a].sentence.as_ref().unwrap().text, &t.nodes[c].sentence.as_ref().unwrap().text);
                assert!(bag_of_words_cosine(x, y) < 0.6);
            }
        }
    }
}

#[test]
fn distractor_sentence_gets_zero_process_reward_under_perfect_verifier() {
    let (w, b) = sim(6, 1.0);
    let cfg = SearchConfig { budget: 30, ..SearchConfig::default() };
    let sc = &w.scenes[0];
    let t = run_search(&sc.context, &cfg, &b).unwrap();
    let mut seen = 0;
    for n in t.nodes.iter().skip(1) {
        let objs = crate::extraction::extract_objects(&n.sentence.as_ref().unwrap().text, crate::simulator::dictionary()).set();
        if objs.iter().any(|o| sc.distractors.contains(o)) {
            assert_eq!(n.reward.as_ref().unwrap().r_proc, 0.0);
            seen += 1;
        }
    }
    assert!(seen > 0);
}

/// Delegates to a simulator and counts calls; optionally fails rollouts.
struct Counting<'a> {
    inner: &'a SimBackend,
    rollouts: AtomicUsize,
    fail_rollouts: bool,
    fail_generation: bool,
}

impl Backend for Counting<'_> {
    fn descriptor(&self) -> String {
        "counting".into()
    }
    fn generate_candidates(&self, c: &SceneContext, p: &str, k: usize, t: f64) -> Result<Vec<CandidateSentence>, BackendError> {
        if self.fail_generation && !p.is_empty() {
            return Err(BackendError::Transport { attempts: 3, message: "down".into() });
        }
        self.inner.generate_candidates(c, p, k, t)
    }
    fn choice_probability(&self, q: &ChoiceQuery) -> Result<Vec<f64>, BackendError> {
        self.inner.choice_probability(q)
    }
    fn greedy_rollout(&self, c: &SceneContext, p: &str, m: usize) -> Result<String, BackendError> {
        self.rollouts.fetch_add(1, Ordering::SeqCst);
        if self.fail_rollouts {
            return Err(BackendError::Transport { attempts: 3, message: "down".into() });
        }
        self.inner.greedy_rollout(c, p, m)
    }
    fn quality_score(&self, c: &SceneContext, t: &str) -> Result<f64, BackendError> {
        self.inner.quality_score(c, t)
    }
}

#[test]
fn evaluation_is_cached() {
    let (w, b) = sim(7, 0.9);
    let counting = Counting { inner: &b, rollouts: AtomicUsize::new(0), fail_rollouts: false, fail_generation: false };
    let rewarder = Rewarder::default();
    let opts = SearchOptions { rewarder: &rewarder, similarity: &BagOfWords, force_completion: false };
    let mut s = Searcher::new(w.scenes[0].context.clone(), SearchConfig::default(), &counting, opts);
    let kids = s.expand(ROOT).unwrap();
    let first = s.evaluate(kids[0]);
    let calls = counting.rollouts.load(Ordering::SeqCst);
    assert_eq!(s.evaluate(kids[0]), first);
    assert_eq!(counting.rollouts.load(Ordering::SeqCst), calls);
}

#[test]
fn failed_rollouts_poison_nodes() {
    let (w, b) = sim(8, 0.9);
    let counting = Counting { inner: &b, rollouts: AtomicUsize::new(0), fail_rollouts: true, fail_generation: false };
    let cfg = SearchConfig { budget: 5, ..SearchConfig::default() };
    let err = run_search(&w.scenes[0].context, &cfg, &counting).unwrap_err();
    assert!(err.tree.nodes.iter().skip(1).all(|n| n.poisoned && n.value() == 0.0));
    assert!(err.tree.complete_leaves().is_empty());
}

#[test]
fn failed_expansion_marks_node_unexpandable() {
    let (w, b) = sim(9, 0.9);
    let counting = Counting { inner: &b, rollouts: AtomicUsize::new(0), fail_rollouts: false, fail_generation: true };
    let cfg = SearchConfig { budget: 6, ..SearchConfig::default() };
    let res = run_search(&w.scenes[0].context, &cfg, &counting);
    let tree = match res {
        Ok(t) => t,
        Err(e) => *e.tree,
    };
    assert!(tree.nodes.iter().any(|n| n.unexpandable));
    tree.check_invariants(1e-9).unwrap();
}
