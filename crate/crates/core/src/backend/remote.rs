//! HTTP+JSON client for a remote model-serving endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::wire::{compose_prompt, encode_image, WireRequest, WireResponse};
use super::{
    match_choice, parse_score, quality_prompt, renormalize_logprobs, sampled_vote, Backend,
    BackendError, ChoiceQuery, GeneratedText, GenerationRequest, GenerationResponse, VOTE_SAMPLES,
};
use crate::text::split_sentence_strs;
use crate::types::{append_sentence, CandidateSentence, SceneContext, Sentence};

pub const ENV_ENDPOINT: &str = "OSCAR_ENDPOINT";
pub const ENV_TOKEN: &str = "OSCAR_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Token cap for candidate generation requests.
    pub max_tokens: usize,
    /// Token cap for a full greedy rollout.
    pub rollout_max_tokens: usize,
    /// Temperature sent for "greedy" requests; the protocol requires > 0.
    pub greedy_temperature: f64,
    /// Estimate choice probabilities by sampled votes when the endpoint
    /// returns no log-probabilities, instead of failing.
    pub vote_fallback: bool,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            model: model.into(),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            max_tokens: 64,
            rollout_max_tokens: 512,
            greedy_temperature: 1e-3,
            vote_fallback: false,
            timeout: Duration::from_secs(60),
        }
    }

    /// Endpoint and token from `OSCAR_ENDPOINT` / `OSCAR_TOKEN`.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok()?;
        let mut cfg = Self::new(endpoint, model);
        cfg.token = std::env::var(ENV_TOKEN).ok();
        Some(cfg)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    limiter: Semaphore,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let limiter = Semaphore::new(config.max_in_flight);
        Self { config, agent, limiter }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post_once(&self, body: &str) -> Result<String, (bool, BackendError)> {
        let _permit = self.limiter.acquire();
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_string(body) {
            Ok(resp) => resp.into_string().map_err(|e| {
                (true, BackendError::Transport { attempts: 1, message: e.to_string() })
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let raw = resp.into_string().unwrap_or_default();
                let retry = code >= 500 || code == 429;
                let err = if retry {
                    BackendError::Transport { attempts: 1, message: format!("HTTP {code}") }
                } else {
                    BackendError::Protocol { message: format!("HTTP {code}"), raw }
                };
                Err((retry, err))
            }
            Err(ureq::Error::Transport(t)) => {
                Err((true, BackendError::Transport { attempts: 1, message: t.to_string() }))
            }
        }
    }

    /// Posts a raw JSON body with retries, returning the response body bytes
    /// untouched.
    pub fn post_raw(&self, body: &str) -> Result<String, BackendError> {
        let policy = &self.config.retry;
        let attempts = policy.attempts.max(1);
        let mut backoff = policy.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(body) {
                Ok(text) => return Ok(text),
                Err((false, err)) => return Err(err),
                Err((true, err)) => {
                    last = match err {
                        BackendError::Transport { message, .. } => message,
                        other => other.to_string(),
                    };
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(BackendError::Transport { attempts, message: last })
    }

    pub fn call(&self, req: &WireRequest) -> Result<WireResponse, BackendError> {
        let raw = self.post_raw(&req.to_json())?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Protocol {
            message: format!("malformed response: {e}"),
            raw,
        })
    }

    fn wire_request(&self, image_ref: &str, prompt: String, n: usize, temperature: f64, max_tokens: usize, logprobs: bool) -> WireRequest {
        WireRequest {
            model: self.config.model.clone(),
            prompt,
            image: encode_image(image_ref),
            n,
            temperature,
            max_tokens,
            logprobs,
        }
    }

    /// Typed generation call.
    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        req.validate()?;
        let wire = self.wire_request(
            &req.image_ref,
            compose_prompt(&req.prompt_text, &req.prefix),
            req.n,
            req.temperature,
            req.max_tokens,
            req.want_logprobs,
        );
        let resp = self.call(&wire)?;
        Ok(GenerationResponse {
            candidates: resp
                .candidates
                .into_iter()
                .take(req.n)
                .map(|c| GeneratedText { text: c.text, sum_logprob: c.logprob.map(|l| l.min(0.0)), token_count: c.tokens })
                .collect(),
            model_id: self.config.model.clone(),
        })
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn generate_candidates(
        &self,
        ctx: &SceneContext,
        prefix: &str,
        k: usize,
        temperature: f64,
    ) -> Result<Vec<CandidateSentence>, BackendError> {
        let resp = self.generate(&GenerationRequest {
            image_ref: ctx.image_ref.clone(),
            prompt_text: ctx.prompt.clone(),
            prefix: prefix.to_string(),
            n: k,
            temperature,
            max_tokens: self.config.max_tokens,
            want_logprobs: true,
        })?;
        let mut out = Vec::new();
        for cand in resp.candidates {
            let parts = split_sentence_strs(&cand.text);
            let Some(first) = parts.first() else { continue };
            let total_tokens = cand.token_count.max(cand.text.split_whitespace().count()).max(1);
            let mut sentence = Sentence::new(*first, 0.0).expect("split yields non-empty text");
            if !sentence.is_terminated() && total_tokens >= self.config.max_tokens {
                // Cut off by the token cap mid-sentence.
                continue;
            }
            // The endpoint scores the whole continuation; attribute a share
            // proportional to the first sentence's tokens.
            let share = sentence.token_count as f64 / total_tokens as f64;
            if let Some(lp) = cand.sum_logprob {
                sentence.logprob = (lp * share.min(1.0)).min(0.0);
            }
            out.push(CandidateSentence {
                sentence,
                logprob_estimated: cand.sum_logprob.is_none(),
                ends_response: parts.len() == 1,
            });
        }
        out.truncate(k);
        Ok(out)
    }

    fn choice_probability(&self, query: &ChoiceQuery) -> Result<Vec<f64>, BackendError> {
        query.validate()?;
        let wire = self.wire_request(&query.image_ref, query.prompt_text.clone(), VOTE_SAMPLES, 1.0, 1, true);
        let resp = self.call(&wire)?;
        if resp.candidates.iter().any(|c| c.logprob.is_none()) {
            if self.config.vote_fallback {
                let answers: Vec<String> = resp.candidates.into_iter().map(|c| c.text).collect();
                return sampled_vote(query, &answers);
            }
            return Err(BackendError::Capability(format!(
                "endpoint returned no log-probabilities; enable vote_fallback to estimate from {VOTE_SAMPLES} sampled answers"
            )));
        }
        let mut best: Vec<Option<f64>> = vec![None; query.choices.len()];
        for c in &resp.candidates {
            if let (Some(i), Some(lp)) = (match_choice(query, &c.text), c.logprob) {
                best[i] = Some(best[i].map_or(lp, |b: f64| b.max(lp)));
            }
        }
        renormalize_logprobs(&best).map_err(|_| BackendError::Protocol {
            message: "no returned answer matched a choice".into(),
            raw: resp.to_json(),
        })
    }

    fn greedy_rollout(&self, ctx: &SceneContext, prefix: &str, max_sentences: usize) -> Result<String, BackendError> {
        let have = split_sentence_strs(prefix).len();
        if have >= max_sentences {
            return Ok(prefix.to_string());
        }
        let resp = self.generate(&GenerationRequest {
            image_ref: ctx.image_ref.clone(),
            prompt_text: ctx.prompt.clone(),
            prefix: prefix.to_string(),
            n: 1,
            temperature: self.config.greedy_temperature,
            max_tokens: self.config.rollout_max_tokens,
            want_logprobs: false,
        })?;
        let Some(cand) = resp.candidates.into_iter().next() else {
            return Ok(prefix.to_string());
        };
        let hit_cap = cand.token_count >= self.config.rollout_max_tokens;
        let mut text = prefix.to_string();
        let parts = split_sentence_strs(&cand.text);
        let last = parts.len().saturating_sub(1);
        for (i, part) in parts.iter().take(max_sentences - have).enumerate() {
            if i == last && hit_cap && !Sentence::new(*part, 0.0).is_some_and(|s| s.is_terminated()) {
                break;
            }
            text = append_sentence(&text, part);
        }
        Ok(text)
    }

    fn quality_score(&self, ctx: &SceneContext, caption: &str) -> Result<f64, BackendError> {
        let wire = self.wire_request(&ctx.image_ref, quality_prompt(caption), 1, self.config.greedy_temperature, 16, false);
        let resp = self.call(&wire)?;
        let reply = resp
            .candidates
            .first()
            .map(|c| c.text.clone())
            .ok_or_else(|| BackendError::Scoring { reply: String::new() })?;
        parse_score(&reply)
    }
}
