//! Sentence-level Monte Carlo tree search for building hallucination-aware
//! preference data, plus a small DPO trainer that closes the loop.
//!
//! The crate is organised around a [`backend::Backend`] trait: every model
//! capability (candidate generation, yes/no verification, greedy rollouts,
//! quality scoring) goes through it. Two implementations ship here:
//!
//! - [`simulator::SimBackend`], a deterministic synthetic vision-language
//!   world whose generator hallucinates at a configurable rate while its
//!   verifier is right with a (higher) configurable accuracy.
//! - [`backend::remote::RemoteBackend`], an HTTP+JSON client for a
//!   model-serving endpoint.
//!
//! On top of that sit the dual-granularity rewards ([`rewards`]), the search
//! engine ([`mcts`]), preference-pair extraction ([`preference`]), the DPO
//! trainer and iteration loop ([`dpo`]), a beam-search comparator
//! ([`baseline`]), and the CHAIR / self-verification tooling
//! ([`extraction`]).

pub mod backend;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod dpo;
pub mod extraction;
pub mod mcts;
pub mod preference;
pub mod rewards;
pub mod rng;
pub mod simulator;
pub mod text;
pub mod types;

pub use config::{ConfigError, SearchConfig};
pub use types::{CandidateSentence, SceneContext, Sentence, Trajectory};
