use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::{SimState, SimWorld, TemplateKind, LURE_TEMPLATES};
use crate::rng::StreamKey;
use crate::text::split_sentence_strs;

/// Softmax template-selection policy. One logit per
/// (scene, depth, template); depths past the table reuse its last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub scenes: usize,
    pub depths: usize,
    pub templates: usize,
    pub temperature: f64,
    pub theta: Vec<f64>,
}

/// Spread of the initial logits around their biases.
const INIT_NOISE: f64 = 0.5;

fn closing_bias(depth: usize) -> f64 {
    match depth {
        0 | 1 => -3.0,
        2 => -2.0,
        3 => 0.5,
        _ => 2.5,
    }
}

impl ToyPolicy {
    pub fn zeros(scenes: usize, depths: usize, templates: usize) -> Self {
        Self {
            scenes,
            depths: depths.max(1),
            templates,
            temperature: 1.0,
            theta: vec![0.0; scenes * depths.max(1) * templates],
        }
    }

    /// The "pretrained" starting policy: noisy logits around a language
    /// prior that closes captions after a few sentences and, in trap scenes,
    /// favours opening with the lure.
    pub fn initial(world: &SimWorld, depths: usize, seed: u64) -> Self {
        let mut p = Self::zeros(world.scenes.len(), depths, world.grammar.len());
        let noise = Normal::new(0.0, INIT_NOISE).expect("valid normal");
        for s in 0..p.scenes {
            let trapped = world.scenes[s].trap.is_some();
            for d in 0..p.depths {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    StreamKey::new(seed, "theta").u64(s as u64).u64(d as u64).seed(),
                );
                for (t, tpl) in world.grammar.iter().enumerate() {
                    let bias = match tpl.kind {
                        TemplateKind::Closing => closing_bias(d),
                        TemplateKind::Filler => -0.5,
                        TemplateKind::Object if trapped && d == 0 && LURE_TEMPLATES.contains(&t) => 1.5,
                        TemplateKind::Object => 0.0,
                    };
                    let idx = p.index(s, d, t);
                    p.theta[idx] = bias + noise.sample(&mut rng);
                }
            }
        }
        p
    }

    pub fn index(&self, scene: usize, depth: usize, template: usize) -> usize {
        let d = depth.min(self.depths - 1);
        (scene * self.depths + d) * self.templates + template
    }

    pub fn logit(&self, scene: usize, depth: usize, template: usize) -> f64 {
        self.theta[self.index(scene, depth, template)]
    }

    /// `log softmax(θ/T)` over `available`, one entry per available template.
    pub fn log_softmax(&self, scene: usize, depth: usize, available: &[usize]) -> Vec<f64> {
        let t = self.temperature;
        let z: Vec<f64> = available.iter().map(|&a| self.logit(scene, depth, a) / t).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        z.into_iter().map(|v| v - lse).collect()
    }

    /// Log-probability of choosing `template` at `state`; `-inf` if it is not
    /// available there.
    pub fn template_logprob(&self, world: &SimWorld, scene: usize, state: SimState, template: usize) -> f64 {
        let avail = world.available(scene, state);
        match avail.iter().position(|&a| a == template) {
            Some(pos) => self.log_softmax(scene, state.depth, &avail)[pos],
            None => f64::NEG_INFINITY,
        }
    }

    /// Adds `coeff · ∂/∂θ log π(template | state)` into `grad`.
    pub fn accumulate_grad(
        &self,
        world: &SimWorld,
        scene: usize,
        state: SimState,
        template: usize,
        coeff: f64,
        grad: &mut [f64],
    ) {
        let avail = world.available(scene, state);
        let logp = self.log_softmax(scene, state.depth, &avail);
        let scale = coeff / self.temperature;
        for (&a, lp) in avail.iter().zip(&logp) {
            let indicator = if a == template { 1.0 } else { 0.0 };
            grad[self.index(scene, state.depth, a)] += scale * (indicator - lp.exp());
        }
    }

    /// Sentence-by-sentence `(state, template)` decomposition of a response.
    pub fn decompose(world: &SimWorld, scene: usize, text: &str) -> Option<Vec<(SimState, usize)>> {
        let mut out = Vec::new();
        let mut prefix = String::new();
        for part in split_sentence_strs(text) {
            let state = world.state_of(scene, &prefix)?;
            let (template, _) = world.parse_sentence(part)?;
            out.push((state, template));
            prefix = crate::types::append_sentence(&prefix, part);
        }
        Some(out)
    }

    /// Sum of per-sentence template log-probabilities; `None` if some
    /// sentence is outside the grammar or unavailable at its position.
    pub fn response_logprob(&self, world: &SimWorld, scene: usize, text: &str) -> Option<f64> {
        let steps = Self::decompose(world, scene, text)?;
        let mut total = 0.0;
        for (state, template) in steps {
            let lp = self.template_logprob(world, scene, state, template);
            if !lp.is_finite() {
                return None;
            }
            total += lp;
        }
        Some(total)
    }
}

/// `log π(sentence)` for a sentence at the start of a response, or `-inf` when
/// the sentence is not in the grammar.
pub fn policy_logprob(policy: &ToyPolicy, world: &SimWorld, scene: usize, sentence: &str) -> f64 {
    let Some(state) = world.state_of(scene, "") else { return f64::NEG_INFINITY };
    match world.parse_sentence(sentence) {
        Some((t, _)) => policy.template_logprob(world, scene, state, t),
        None => f64::NEG_INFINITY,
    }
}
