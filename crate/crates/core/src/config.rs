//! Search configuration and the flat `key = value` run-configuration file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BeamConfig;
use crate::dpo::DpoConfig;
use crate::preference::PathScore;
use crate::simulator::WorldConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub c_puct: f64,
    /// Exponent λ in the length-normalised prior `p / |a|^λ`.
    pub length_penalty: f64,
    /// γ in `Q = r + γ·V(child)`.
    pub discount: f64,
    /// Candidates requested per expansion (K).
    pub expansion_width: usize,
    /// Siblings at or above this similarity are dropped during expansion.
    pub sim_threshold: f64,
    /// Search iterations.
    pub budget: usize,
    /// Maximum sentences per response.
    pub max_depth: usize,
    pub temperature: f64,
    /// Minimum Q gap (δ_Q) for a sibling preference pair.
    pub q_margin: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_puct: 1.0,
            length_penalty: 1.25,
            discount: 1.0,
            expansion_width: 4,
            sim_threshold: 0.9,
            budget: 64,
            max_depth: 12,
            temperature: 1.0,
            q_margin: 0.05,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.c_puct.is_finite() && self.c_puct > 0.0) {
            return Err(invalid("c_puct", "must be a positive real"));
        }
        if !(self.length_penalty.is_finite() && self.length_penalty > 0.0) {
            return Err(invalid("length_penalty", "must be a positive real"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(invalid("discount", "must lie in [0, 1]"));
        }
        if self.expansion_width == 0 {
            return Err(invalid("expansion_width", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return Err(invalid("sim_threshold", "must lie in [0, 1]"));
        }
        if self.budget == 0 {
            return Err(invalid("budget", "must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(invalid("max_depth", "must be at least 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(invalid("temperature", "must be a positive real"));
        }
        if !(self.q_margin.is_finite() && self.q_margin >= 0.0) {
            return Err(invalid("q_margin", "must be a nonnegative real"));
        }
        Ok(())
    }
}

/// Parsed `key = value` document. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Parse { line, message: "empty key".into() });
            }
            entries.insert(key, (line, v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets or replaces a key; used for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &str)> {
        self.entries.iter().map(|(k, (l, v))| (k.as_str(), *l, v.as_str()))
    }
}

/// Every knob a run can set from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub path_score: PathScore,
    pub dpo: DpoConfig,
    pub world: WorldConfig,
    pub beam: BeamConfig,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e| ConfigError::Parse {
        line,
        message: format!("`{key}`: {e}"),
    })
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (key, line, v) in kv.iter() {
            cfg.apply(key, line, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `seed` sets the search, world, and training seeds together.
    fn apply(&mut self, key: &str, line: usize, v: &str) -> Result<(), ConfigError> {
        let s = &mut self.search;
        match key {
            "c_puct" => s.c_puct = parse_value(line, key, v)?,
            "length_penalty" => s.length_penalty = parse_value(line, key, v)?,
            "discount" => s.discount = parse_value(line, key, v)?,
            "expansion_width" => s.expansion_width = parse_value(line, key, v)?,
            "sim_threshold" => s.sim_threshold = parse_value(line, key, v)?,
            "budget" => s.budget = parse_value(line, key, v)?,
            "max_depth" => s.max_depth = parse_value(line, key, v)?,
            "temperature" => s.temperature = parse_value(line, key, v)?,
            "q_margin" => s.q_margin = parse_value(line, key, v)?,
            "seed" => {
                let seed: u64 = parse_value(line, key, v)?;
                self.search.seed = seed;
                self.world.seed = seed;
                self.dpo.seed = seed;
            }
            "path_score" => self.path_score = parse_value(line, key, v)?,
            "beta" => self.dpo.beta = parse_value(line, key, v)?,
            "learning_rate" => self.dpo.learning_rate = parse_value(line, key, v)?,
            "epochs" => self.dpo.epochs = parse_value(line, key, v)?,
            "batch_size" => self.dpo.batch_size = parse_value(line, key, v)?,
            "iterations" => self.dpo.iterations = parse_value(line, key, v)?,
            "sibling_weight" => self.dpo.sibling_weight = parse_value(line, key, v)?,
            "scenes" => self.world.scenes = parse_value(line, key, v)?,
            "hallucination_rate" => self.world.hallucination_rate = parse_value(line, key, v)?,
            "verifier_accuracy" => self.world.verifier_accuracy = parse_value(line, key, v)?,
            "trap_fraction" => self.world.trap_fraction = parse_value(line, key, v)?,
            "beam_width" => self.beam.beam_width = parse_value(line, key, v)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string(), line }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.search.validate()?;
        self.dpo.validate()?;
        self.world.validate()?;
        self.beam.validate()?;
        Ok(())
    }

    /// Renders the config back into the flat file format.
    pub fn to_file_string(&self) -> String {
        let s = &self.search;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("c_puct", s.c_puct.to_string());
        put("length_penalty", s.length_penalty.to_string());
        put("discount", s.discount.to_string());
        put("expansion_width", s.expansion_width.to_string());
        put("sim_threshold", s.sim_threshold.to_string());
        put("budget", s.budget.to_string());
        put("max_depth", s.max_depth.to_string());
        put("temperature", s.temperature.to_string());
        put("q_margin", s.q_margin.to_string());
        put("seed", s.seed.to_string());
        put("path_score", self.path_score.to_string());
        put("beta", self.dpo.beta.to_string());
        put("learning_rate", self.dpo.learning_rate.to_string());
        put("epochs", self.dpo.epochs.to_string());
        put("batch_size", self.dpo.batch_size.to_string());
        put("iterations", self.dpo.iterations.to_string());
        put("sibling_weight", self.dpo.sibling_weight.to_string());
        put("scenes", self.world.scenes.to_string());
        put("hallucination_rate", self.world.hallucination_rate.to_string());
        put("verifier_accuracy", self.world.verifier_accuracy.to_string());
        put("trap_fraction", self.world.trap_fraction.to_string());
        put("beam_width", self.beam.beam_width.to_string());
        out
    }
}
