//! A deterministic synthetic vision-language world.
//!
//! Each scene has a ground-truth object set and a disjoint set of plausible
//! distractors. Generation fills template slots with a distractor at rate
//! `h`; presence verification puts mass `d` on the right answer. With
//! `d > 1 − h` verification is more reliable than generation, which is the
//! gap the search exploits.

mod backend;
mod policy;
mod world;

pub use backend::{distractor_mentions, SimBackend, GREEDY_TEMPERATURE};
pub use policy::{policy_logprob, ToyPolicy};
pub use world::{
    default_grammar, dictionary, SimScene, SimState, SimWorld, Template, TemplateKind, Trap,
    WorldConfig, IMAGE_SCHEME, LURE_TEMPLATES, SCENE_PROMPT,
};
