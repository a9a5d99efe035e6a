use std::sync::Arc;

use rand::Rng;

use super::policy::ToyPolicy;
use super::world::{dictionary, SimState, SimWorld, TemplateKind};
use crate::backend::wire::{split_prompt, WireCandidate, WireRequest, WireResponse};
use crate::backend::{
    parse_quality_prompt, Backend, BackendError, ChoiceQuery, VERIFICATION_TEMPLATE,
};
use crate::extraction::parse_discriminative_query;
use crate::rng::StreamKey;
use crate::types::{append_sentence, CandidateSentence, SceneContext, Sentence};

/// Sampling temperatures at or below this are treated as argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-2;

/// The simulator as a [`Backend`]: generation samples from a [`ToyPolicy`],
/// verification and scoring are computed from the world's ground truth.
#[derive(Clone)]
pub struct SimBackend {
    world: Arc<SimWorld>,
    policy: Arc<ToyPolicy>,
    seed: u64,
    verification_template: String,
}

impl SimBackend {
    pub fn new(world: Arc<SimWorld>, policy: Arc<ToyPolicy>, seed: u64) -> Self {
        Self {
            world,
            policy,
            seed,
            verification_template: VERIFICATION_TEMPLATE.to_string(),
        }
    }

    /// Needed only when the process-reward prompt template is customised.
    pub fn with_verification_template(mut self, template: impl Into<String>) -> Self {
        self.verification_template = template.into();
        self
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.policy
    }

    fn scene(&self, ctx: &SceneContext) -> Result<usize, BackendError> {
        self.world
            .scene_index(&ctx.image_ref)
            .ok_or_else(|| BackendError::InvalidRequest(format!("unknown scene {}", ctx.image_ref)))
    }

    fn state(&self, scene: usize, prefix: &str) -> Result<SimState, BackendError> {
        self.world
            .state_of(scene, prefix)
            .ok_or_else(|| BackendError::InvalidRequest(format!("prefix outside the simulator grammar: {prefix:?}")))
    }

    /// Up to `k` distinct templates drawn without replacement from
    /// `softmax(θ/temperature)` (Gumbel top-k), ordered by draw.
    pub fn sample_templates(&self, scene: usize, prefix: &str, state: SimState, k: usize, temperature: f64) -> Vec<usize> {
        let avail = self.world.available(scene, state);
        let mut keyed: Vec<(f64, usize)> = if temperature <= GREEDY_TEMPERATURE {
            avail.iter().map(|&t| (self.policy.logit(scene, state.depth, t), t)).collect()
        } else {
            let mut rng = StreamKey::new(self.seed, "generate")
                .u64(scene as u64)
                .str(prefix)
                .u64(temperature.to_bits())
                .rng();
            avail
                .iter()
                .map(|&t| {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let gumbel = -(-u.ln()).ln();
                    (self.policy.logit(scene, state.depth, t) / temperature + gumbel, t)
                })
                .collect()
        };
        // Stable sort keeps lower template indices first on ties.
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        keyed.into_iter().take(k).map(|(_, t)| t).collect()
    }

    fn greedy_template(&self, scene: usize, state: SimState) -> Option<usize> {
        self.sample_templates(scene, "", state, 1, 0.0).first().copied()
    }

    /// Greedy continuation from `prefix` to a closing sentence or
    /// `max_sentences` sentences.
    pub fn rollout_in_scene(&self, scene: usize, prefix: &str, max_sentences: usize) -> Result<String, BackendError> {
        let mut text = prefix.to_string();
        let mut state = self.state(scene, prefix)?;
        while !state.terminal && state.depth < max_sentences {
            let Some(t) = self.greedy_template(scene, state) else { break };
            text = append_sentence(&text, &self.world.render(scene, state, t));
            state = self.state(scene, &text)?;
        }
        Ok(text)
    }

    /// The simulator behind an HTTP endpoint: maps wire requests onto this
    /// backend. Generation candidates carry a greedy completion after their
    /// first sentence, up to `max_sentences`.
    pub fn wire_handler(self, max_sentences: usize) -> crate::backend::stub::Handler {
        Box::new(move |body: &str| {
            let req: WireRequest = serde_json::from_str(body).map_err(|_| 400u16)?;
            self.answer_wire(&req, max_sentences).map(|r| r.to_json()).map_err(|_| 422u16)
        })
    }

    pub fn answer_wire(&self, req: &WireRequest, max_sentences: usize) -> Result<WireResponse, BackendError> {
        let scene = self
            .world
            .scene_index(&req.image)
            .ok_or_else(|| BackendError::InvalidRequest(format!("unknown image {}", req.image)))?;
        let ctx = self.world.scenes[scene].context.clone();
        let candidates = if req.max_tokens == 1 {
            let q = ChoiceQuery::yes_no(&req.image, &req.prompt);
            let probs = self.choice_probability(&q)?;
            q.choices
                .iter()
                .zip(probs)
                .filter(|(_, p)| *p > 0.0)
                .map(|(c, p)| WireCandidate {
                    text: c.clone(),
                    logprob: req.logprobs.then_some(p.ln()),
                    tokens: 1,
                })
                .collect()
        } else if let Some(caption) = parse_quality_prompt(&req.prompt) {
            let score = self.quality_score(&ctx, caption)?;
            vec![WireCandidate { text: format!("{score}"), logprob: None, tokens: 1 }]
        } else {
            let (_, prefix) = split_prompt(&req.prompt);
            let mut out = Vec::new();
            for cand in self.generate_candidates(&ctx, prefix, req.n, req.temperature)? {
                let first = append_sentence(prefix, &cand.sentence.text);
                let full = if cand.ends_response {
                    first
                } else {
                    self.rollout_in_scene(scene, &first, max_sentences)?
                };
                let continuation = full.strip_prefix(prefix.trim()).unwrap_or(&full).trim().to_string();
                let logprob = self
                    .policy
                    .response_logprob(&self.world, scene, &full)
                    .zip(self.policy.response_logprob(&self.world, scene, prefix))
                    .map(|(a, b)| a - b);
                out.push(WireCandidate {
                    tokens: continuation.split_whitespace().count(),
                    text: continuation,
                    logprob: if req.logprobs { logprob } else { None },
                });
            }
            out
        };
        Ok(WireResponse { candidates })
    }
}

impl Backend for SimBackend {
    fn descriptor(&self) -> String {
        let c = &self.world.config;
        format!(
            "sim:seed={} scenes={} h={} d={} traps={}",
            c.seed,
            self.world.scenes.len(),
            c.hallucination_rate,
            c.verifier_accuracy,
            c.trap_fraction
        )
    }

    fn generate_candidates(
        &self,
        ctx: &SceneContext,
        prefix: &str,
        k: usize,
        temperature: f64,
    ) -> Result<Vec<CandidateSentence>, BackendError> {
        if k == 0 {
            return Err(BackendError::InvalidRequest("k must be at least 1".into()));
        }
        let scene = self.scene(ctx)?;
        let state = self.state(scene, prefix)?;
        let avail = self.world.available(scene, state);
        let logp = self.policy.log_softmax(scene, state.depth, &avail);
        let picks = self.sample_templates(scene, prefix, state, k, temperature);
        Ok(picks
            .into_iter()
            .map(|t| {
                let pos = avail.iter().position(|&a| a == t).expect("picked from available");
                let text = self.world.render(scene, state, t);
                CandidateSentence {
                    sentence: Sentence::new(text, logp[pos]).expect("templates render non-empty"),
                    logprob_estimated: false,
                    ends_response: self.world.grammar[t].kind == TemplateKind::Closing,
                }
            })
            .collect())
    }

    fn choice_probability(&self, query: &ChoiceQuery) -> Result<Vec<f64>, BackendError> {
        query.validate()?;
        let scene = self
            .world
            .scene_index(&query.image_ref)
            .ok_or_else(|| BackendError::InvalidRequest(format!("unknown scene {}", query.image_ref)))?;
        let p_yes = match parse_discriminative_query(&query.prompt_text) {
            Some(object) => self.world.verify(scene, object),
            None => {
                let sentence = strip_template(&self.verification_template, &query.prompt_text)
                    .unwrap_or(&query.prompt_text);
                self.world.verify_sentence(scene, sentence)
            }
        };
        let (yes, no) = match (query.index_of("Yes"), query.index_of("No")) {
            (Some(y), Some(n)) => (y, n),
            _ => return Err(BackendError::Capability("simulator answers only Yes/No questions".into())),
        };
        let mut probs = vec![0.0; query.choices.len()];
        probs[yes] = p_yes;
        probs[no] = 1.0 - p_yes;
        Ok(probs)
    }

    fn greedy_rollout(&self, ctx: &SceneContext, prefix: &str, max_sentences: usize) -> Result<String, BackendError> {
        let scene = self.scene(ctx)?;
        self.rollout_in_scene(scene, prefix, max_sentences)
    }

    fn quality_score(&self, _ctx: &SceneContext, caption: &str) -> Result<f64, BackendError> {
        Ok(self.world.quality(caption))
    }
}

fn strip_template<'a>(template: &str, prompt: &'a str) -> Option<&'a str> {
    let (head, tail) = template.split_once("{sentence}")?;
    prompt.strip_prefix(head)?.strip_suffix(tail)
}

/// `(distractor mentions, all mentions)` across `texts` for `scene`.
pub fn distractor_mentions(world: &SimWorld, scene: usize, texts: &[String]) -> (usize, usize) {
    let gt = &world.scenes[scene].context.gt_objects;
    let mut bad = 0;
    let mut total = 0;
    for t in texts {
        for m in crate::extraction::extract_objects(t, dictionary()).mentions {
            total += 1;
            if !gt.contains(&m.canonical) {
                bad += 1;
            }
        }
    }
    (bad, total)
}
