//! JSON bodies exchanged with a model-serving endpoint.
//!
//! ```text
//! POST <endpoint>
//! {"model":..,"prompt":..,"image":..,"n":..,"temperature":..,"max_tokens":..,"logprobs":bool}
//! -> {"candidates":[{"text":..,"logprob":number|null,"tokens":..}]}
//! ```
//!
//! Field order is fixed by the struct definitions, so serialisation is
//! byte-stable.

use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub prompt: String,
    /// Base64 file contents, or the reference itself (URL or opaque id).
    pub image: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub text: String,
    pub logprob: Option<f64>,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub candidates: Vec<WireCandidate>,
}

impl WireRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serialises")
    }
}

impl WireResponse {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("response serialises")
    }
}

/// Separator between the instruction and the partial response in a
/// generation prompt.
pub const PREFIX_SEPARATOR: char = '\n';

/// Generation prompt: the instruction, then the partial response (if any) on
/// the next line.
pub fn compose_prompt(prompt: &str, prefix: &str) -> String {
    if prefix.is_empty() {
        prompt.to_string()
    } else {
        format!("{prompt}{PREFIX_SEPARATOR}{prefix}")
    }
}

/// Inverse of [`compose_prompt`] for single-line instructions.
pub fn split_prompt(composed: &str) -> (&str, &str) {
    composed.split_once(PREFIX_SEPARATOR).unwrap_or((composed, ""))
}

/// Local files are inlined as base64; anything else is sent verbatim.
pub fn encode_image(image_ref: &str) -> String {
    let path = Path::new(image_ref);
    if !image_ref.contains("://") && path.is_file() {
        if let Ok(bytes) = std::fs::read(path) {
            return base64::engine::general_purpose::STANDARD.encode(bytes);
        }
    }
    image_ref.to_string()
}
