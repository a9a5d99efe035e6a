use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::extraction::{extract_objects, indefinite_article, SynonymDictionary};
use crate::rng::StreamKey;
use crate::text::split_sentence_strs;
use crate::types::SceneContext;

pub const SCENE_PROMPT: &str = "Describe this image in detail.";
pub const IMAGE_SCHEME: &str = "sim://scene/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub scenes: usize,
    /// Per-slot probability that generation names a distractor (h).
    pub hallucination_rate: f64,
    /// Probability mass the verifier puts on the correct answer (d).
    pub verifier_accuracy: f64,
    /// Share of scenes carrying a delayed-hallucination trap.
    pub trap_fraction: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub distractors: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 50,
            hallucination_rate: 0.3,
            verifier_accuracy: 0.9,
            trap_fraction: 0.0,
            min_objects: 3,
            max_objects: 6,
            distractors: 4,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| Err(ConfigError::Invalid { field, reason: reason.into() });
        if self.scenes == 0 {
            return bad("scenes", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.hallucination_rate) {
            return bad("hallucination_rate", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.verifier_accuracy) {
            return bad("verifier_accuracy", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.trap_fraction) {
            return bad("trap_fraction", "must lie in [0, 1]");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("min_objects", "need 1 <= min_objects <= max_objects");
        }
        if self.distractors == 0 || self.max_objects + self.distractors > 80 {
            return bad("distractors", "need at least one and room in the vocabulary");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// Names one or two objects.
    Object,
    /// Names nothing and does not end the response.
    Filler,
    /// Names nothing and ends the response.
    Closing,
}

/// A sentence pattern. `{0}` and `{1}` expand to an indefinite article plus
/// an object name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub pattern: String,
    pub slots: usize,
    pub kind: TemplateKind,
}

impl Template {
    fn new(pattern: &str, slots: usize, kind: TemplateKind) -> Self {
        Self { pattern: pattern.into(), slots, kind }
    }

    pub fn render(&self, objects: &[&str]) -> String {
        let mut out = self.pattern.clone();
        for (i, obj) in objects.iter().enumerate() {
            out = out.replace(&format!("{{{i}}}"), &format!("{} {obj}", indefinite_article(obj)));
        }
        capitalize(&out)
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn default_grammar() -> Vec<Template> {
    use TemplateKind::*;
    vec![
        Template::new("There is {0} in the image.", 1, Object),
        Template::new("{0} is visible.", 1, Object),
        Template::new("The picture shows {0}.", 1, Object),
        Template::new("I can also see {0}.", 1, Object),
        Template::new("{0} is next to {1}.", 2, Object),
        Template::new("There is {0} near {1}.", 2, Object),
        Template::new("The colors are bright.", 0, Filler),
        Template::new("Overall, it is a pleasant scene.", 0, Closing),
        Template::new("That is all I can see.", 0, Closing),
    ]
}

/// In a trap scene these templates name the lure object when they open the
/// response.
pub const LURE_TEMPLATES: [usize; 3] = [0, 1, 2];

/// A delayed-hallucination trap: opening with a lure sentence commits the
/// response to naming `distractor` at depth `spring_depth`, and closing is
/// unavailable before then.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub lure: String,
    pub distractor: String,
    pub spring_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub context: SceneContext,
    pub distractors: BTreeSet<String>,
    pub trap: Option<Trap>,
}

/// Generation state implied by a partial response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimState {
    pub depth: usize,
    pub trap_active: bool,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub config: WorldConfig,
    pub scenes: Vec<SimScene>,
    pub grammar: Vec<Template>,
}

pub fn dictionary() -> &'static SynonymDictionary {
    static DICT: OnceLock<SynonymDictionary> = OnceLock::new();
    DICT.get_or_init(SynonymDictionary::coco)
}

impl SimWorld {
    pub fn generate(config: WorldConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let vocab: Vec<&String> = dictionary().vocabulary().iter().collect();
        let mut scenes = Vec::with_capacity(config.scenes);
        for i in 0..config.scenes {
            let mut rng = StreamKey::new(config.seed, "scene").u64(i as u64).rng();
            let n_true = rng.gen_range(config.min_objects..=config.max_objects);
            let picked: Vec<&String> = vocab
                .choose_multiple(&mut rng, n_true + config.distractors)
                .copied()
                .collect();
            let (truth, distract) = picked.split_at(n_true);
            let trapped = rng.gen::<f64>() < config.trap_fraction;
            let trap = trapped.then(|| Trap {
                lure: truth[0].clone(),
                distractor: distract[0].clone(),
                spring_depth: 2,
            });
            scenes.push(SimScene {
                context: SceneContext::new(format!("{IMAGE_SCHEME}{i}"), SCENE_PROMPT, truth.iter().map(|s| s.as_str())),
                distractors: distract.iter().map(|s| s.to_string()).collect(),
                trap,
            });
        }
        Ok(Self { config, scenes, grammar: default_grammar() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn scene_index(&self, image_ref: &str) -> Option<usize> {
        if let Some(i) = image_ref.strip_prefix(IMAGE_SCHEME).and_then(|s| s.parse::<usize>().ok()) {
            if self.scenes.get(i).is_some_and(|s| s.context.image_ref == image_ref) {
                return Some(i);
            }
        }
        self.scenes.iter().position(|s| s.context.image_ref == image_ref)
    }

    pub fn contexts(&self) -> Vec<SceneContext> {
        self.scenes.iter().map(|s| s.context.clone()).collect()
    }

    fn template_regexes(&self) -> &[Regex] {
        static CACHE: OnceLock<Vec<Regex>> = OnceLock::new();
        // The grammar is fixed, so one compiled set serves every world.
        debug_assert_eq!(self.grammar, default_grammar());
        CACHE.get_or_init(|| {
            default_grammar()
                .iter()
                .map(|t| {
                    let mut re = regex::escape(&t.pattern);
                    for i in 0..t.slots {
                        re = re.replace(&format!("\\{{{i}\\}}"), "(?:[Aa]n?) ([a-z][a-z ]*?)");
                    }
                    Regex::new(&format!("^{re}$")).expect("template regex")
                })
                .collect()
        })
    }

    /// Identifies the template behind a sentence, with the objects it names.
    pub fn parse_sentence(&self, sentence: &str) -> Option<(usize, Vec<String>)> {
        let sentence = sentence.trim();
        for (i, re) in self.template_regexes().iter().enumerate() {
            if let Some(caps) = re.captures(sentence) {
                let objs = caps.iter().skip(1).flatten().map(|m| m.as_str().to_string()).collect();
                return Some((i, objs));
            }
        }
        None
    }

    /// The state reached after `prefix`, or `None` if it contains sentences
    /// outside the grammar.
    pub fn state_of(&self, scene: usize, prefix: &str) -> Option<SimState> {
        let parts = split_sentence_strs(prefix);
        let mut templates = Vec::with_capacity(parts.len());
        for p in &parts {
            templates.push(self.parse_sentence(p)?.0);
        }
        let trap_active = self.scenes[scene].trap.is_some()
            && templates.first().is_some_and(|t| LURE_TEMPLATES.contains(t));
        let terminal = templates
            .last()
            .is_some_and(|&t| self.grammar[t].kind == TemplateKind::Closing);
        Some(SimState { depth: parts.len(), trap_active, terminal })
    }

    /// Templates that may be used from `state`, in index order.
    pub fn available(&self, scene: usize, state: SimState) -> Vec<usize> {
        if state.terminal {
            return Vec::new();
        }
        let trap = self.scenes[scene].trap.as_ref().filter(|_| state.trap_active);
        self.grammar
            .iter()
            .enumerate()
            .filter(|(_, t)| match t.kind {
                TemplateKind::Object => true,
                TemplateKind::Filler => trap.map_or(true, |tr| state.depth != tr.spring_depth),
                TemplateKind::Closing => {
                    state.depth > 0 && trap.map_or(true, |tr| state.depth > tr.spring_depth)
                }
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Objects filling `template`'s slots at `state`. Fixed per
    /// (scene, depth, template, trap state).
    pub fn instantiate(&self, scene: usize, state: SimState, template: usize) -> Vec<String> {
        let sc = &self.scenes[scene];
        let slots = self.grammar[template].slots;
        let truth: Vec<&String> = sc.context.gt_objects.iter().collect();
        let distract: Vec<&String> = sc.distractors.iter().collect();
        let mut out: Vec<String> = Vec::with_capacity(slots);
        for slot in 0..slots {
            if slot == 0 {
                if let Some(trap) = &sc.trap {
                    if state.depth == 0 && LURE_TEMPLATES.contains(&template) {
                        out.push(trap.lure.clone());
                        continue;
                    }
                    if state.trap_active && state.depth == trap.spring_depth {
                        out.push(trap.distractor.clone());
                        continue;
                    }
                }
            }
            let mut rng = StreamKey::new(self.config.seed, "slot")
                .u64(scene as u64)
                .u64(state.depth as u64)
                .u64(template as u64)
                .u64(state.trap_active as u64)
                .u64(slot as u64)
                .rng();
            let hallucinate = rng.gen::<f64>() < self.config.hallucination_rate;
            let pool = if hallucinate { &distract } else { &truth };
            let fresh: Vec<&&String> = pool.iter().filter(|o| !out.contains(o)).collect();
            let pick = if fresh.is_empty() {
                pool.choose(&mut rng).expect("non-empty pool")
            } else {
                fresh.choose(&mut rng).expect("non-empty pool")
            };
            out.push(pick.to_string());
        }
        out
    }

    pub fn render(&self, scene: usize, state: SimState, template: usize) -> String {
        let objs = self.instantiate(scene, state, template);
        let refs: Vec<&str> = objs.iter().map(String::as_str).collect();
        self.grammar[template].render(&refs)
    }

    /// Probability the verifier answers "Yes" to a presence probe.
    pub fn verify(&self, scene: usize, object: &str) -> f64 {
        let d = self.config.verifier_accuracy;
        let canonical = dictionary().lookup(object);
        let present = canonical.is_some_and(|c| self.scenes[scene].context.gt_objects.contains(c));
        if present {
            d
        } else {
            1.0 - d
        }
    }

    /// Probability the verifier says a sentence names an absent object.
    pub fn verify_sentence(&self, scene: usize, sentence: &str) -> f64 {
        let d = self.config.verifier_accuracy;
        let gt = &self.scenes[scene].context.gt_objects;
        let hallucinated = extract_objects(sentence, dictionary())
            .mentions
            .iter()
            .any(|m| !gt.contains(&m.canonical));
        if hallucinated {
            d
        } else {
            1.0 - d
        }
    }

    /// `10 − 2·redundant − 3·violations`, clamped to `[0, 10]`. A sentence
    /// is redundant when it repeats an earlier one or names only objects
    /// already named; a violation is a sentence outside the grammar or a
    /// closing sentence that is not last.
    pub fn quality(&self, caption: &str) -> f64 {
        let parts = split_sentence_strs(caption);
        let mut seen_text: Vec<&str> = Vec::new();
        let mut seen_objects: BTreeSet<String> = BTreeSet::new();
        let mut redundant = 0usize;
        let mut violations = 0usize;
        for (i, p) in parts.iter().enumerate() {
            match self.parse_sentence(p) {
                None => violations += 1,
                Some((t, objs)) => {
                    if self.grammar[t].kind == TemplateKind::Closing && i + 1 != parts.len() {
                        violations += 1;
                    }
                    if seen_text.contains(p) {
                        redundant += 1;
                    } else if !objs.is_empty() && objs.iter().all(|o| seen_objects.contains(o)) {
                        redundant += 1;
                    }
                    seen_objects.extend(objs);
                }
            }
            seen_text.push(p);
        }
        (10.0 - 2.0 * redundant as f64 - 3.0 * violations as f64).clamp(0.0, 10.0)
    }
}
