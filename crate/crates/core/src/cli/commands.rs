use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::run::RunDir;
use super::{load_config, BackendArgs, CliError, Common};
use crate::backend::remote::{RemoteBackend, RemoteConfig, ENV_TOKEN};
use crate::backend::Backend;
use crate::baseline::{beam_search_pairs, BeamConfig};
use crate::config::RunConfig;
use crate::dpo::{greedy_captions, greedy_hallucination_rate, prepare_pairs, run_loop, train, IterationOutput};
use crate::extraction::{chair as chair_metrics, self_verify_rewrite, ChairReport, SynonymDictionary};
use crate::mcts::{run_search, SearchTree, ROOT};
use crate::preference::{extract_pairs, lint_record, read_dataset, write_records, DatasetRecord};
use crate::rewards::write_audit;
use crate::simulator::{SimBackend, SimWorld, ToyPolicy};
use crate::types::SceneContext;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("serialisable");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

fn load_world(cfg: &RunConfig, path: Option<&Path>) -> Result<Arc<SimWorld>, CliError> {
    let world = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            SimWorld::from_json(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?
        }
        None => SimWorld::generate(cfg.world.clone())?,
    };
    Ok(Arc::new(world))
}

fn load_policy(cfg: &RunConfig, world: &SimWorld, path: Option<&Path>) -> Result<ToyPolicy, CliError> {
    let policy = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ToyPolicy>(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?
        }
        None => ToyPolicy::initial(world, cfg.search.max_depth, cfg.world.seed),
    };
    if policy.scenes != world.scenes.len() || policy.templates != world.grammar.len() {
        return Err(runtime("policy shape does not match the world"));
    }
    Ok(policy)
}

/// The remote endpoint when one is configured, the simulator otherwise.
fn make_backend(cfg: &RunConfig, args: &BackendArgs, seed: u64) -> Result<(Box<dyn Backend>, Arc<SimWorld>), CliError> {
    let world = load_world(cfg, args.world.as_deref())?;
    let remote = match &args.endpoint {
        Some(url) => {
            let mut rc = RemoteConfig::new(url.clone(), args.model.clone());
            rc.token = std::env::var(ENV_TOKEN).ok();
            Some(rc)
        }
        None => RemoteConfig::from_env(args.model.clone()),
    };
    if let Some(mut rc) = remote {
        rc.vote_fallback = args.vote_fallback;
        return Ok((Box::new(RemoteBackend::new(rc)), world));
    }
    let policy = load_policy(cfg, &world, args.policy.as_deref())?;
    Ok((Box::new(SimBackend::new(Arc::clone(&world), Arc::new(policy), seed)), world))
}

fn pick_scenes(world: &SimWorld, scene: Option<usize>) -> Result<Vec<usize>, CliError> {
    match scene {
        Some(i) if i >= world.scenes.len() => Err(CliError::Usage(format!(
            "--scene {i} is out of range; the world has {} scenes",
            world.scenes.len()
        ))),
        Some(i) => Ok(vec![i]),
        None => Ok((0..world.scenes.len()).collect()),
    }
}

fn start(out: &Path, command: &str, cfg: &RunConfig) -> Result<RunDir, CliError> {
    let run = RunDir::create(out, command, cfg.to_file_string(), cfg.search.seed)?;
    run.event("start", json!({ "command": command }))?;
    Ok(run)
}

pub fn search(common: &Common, args: &BackendArgs, scene: Option<usize>, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (backend, world) = make_backend(&cfg, args, cfg.search.seed)?;
    let scenes = pick_scenes(&world, scene)?;
    let mut run = start(out, "search", &cfg)?;
    run.set_backend(backend.descriptor());
    let results: Vec<_> = scenes
        .par_iter()
        .map(|&s| run_search(&world.scenes[s].context, &cfg.search, &*backend))
        .collect();
    let mut failed = 0;
    for (&s, r) in scenes.iter().zip(results) {
        let (tree, error) = match r {
            Ok(t) => (t, None),
            Err(e) => (*e.tree, Some(e.message)),
        };
        failed += usize::from(error.is_some());
        let mut audit = Vec::new();
        write_audit(&mut audit, &tree.audit())?;
        run.write(&format!("trees/scene-{s:04}.json"), "search", format!("{}\n", tree.to_json()).as_bytes())?;
        run.write(&format!("rewards/scene-{s:04}.jsonl"), "rewards", &audit)?;
        let leaves = tree.complete_leaves().len();
        run.event(
            "search",
            json!({ "scene": s, "nodes": tree.nodes.len(), "evaluations": tree.evaluations, "complete_leaves": leaves, "error": error }),
        )?;
        eprintln!("scene {s}: {} nodes, {} evaluations, {leaves} complete leaves", tree.nodes.len(), tree.evaluations);
        if let Some(msg) = error {
            eprintln!("scene {s}: {msg}");
        }
    }
    run.event("finish", json!({ "scenes": scenes.len(), "failed": failed }))?;
    run.finish()?;
    if failed == scenes.len() {
        return Err(runtime("every search failed"));
    }
    Ok(())
}

fn load_trees(dir: &Path) -> Result<Vec<(String, SearchTree)>, CliError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p)?;
            let tree = SearchTree::from_json(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), tree))
        })
        .collect()
}

pub fn build_prefs(common: &Common, trees: &Path, iteration: usize, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let loaded = load_trees(trees)?;
    if loaded.is_empty() {
        return Err(runtime(format!("no tree dumps in {}", trees.display())));
    }
    let mut run = start(out, "build-prefs", &cfg)?;
    run.set_backend("none".into());
    let mut records: Vec<DatasetRecord> = Vec::new();
    for (name, tree) in &loaded {
        let pairs = extract_pairs(tree, cfg.path_score, cfg.search.q_margin);
        run.event("tree", json!({ "file": name, "pairs": pairs.len() }))?;
        records.extend(pairs.iter().map(|p| p.record(iteration)));
    }
    let issues: usize = records
        .iter()
        .enumerate()
        .map(|(i, r)| lint_record(i + 1, r, cfg.search.q_margin).len())
        .sum();
    let mut bytes = Vec::new();
    write_records(&mut bytes, &records)?;
    run.write("dataset.jsonl", "preference", &bytes)?;
    run.event("finish", json!({ "trees": loaded.len(), "pairs": records.len(), "lint_issues": issues }))?;
    run.finish()?;
    eprintln!("{} pairs from {} trees", records.len(), loaded.len());
    if issues > 0 {
        return Err(runtime(format!("{issues} dataset lint issues")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainReport {
    pairs: usize,
    skipped: Vec<crate::dpo::SkippedPair>,
    loss_curve: Vec<f64>,
    hallucination_before: f64,
    hallucination_after: f64,
}

pub fn train_cmd(common: &Common, args: &BackendArgs, dataset: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let world = load_world(&cfg, args.world.as_deref())?;
    let reference = load_policy(&cfg, &world, args.policy.as_deref())?;
    let records = read_dataset(dataset).map_err(runtime)?;
    let (pairs, skipped) = prepare_pairs(&world, &records, cfg.dpo.sibling_weight);
    if pairs.is_empty() {
        return Err(runtime(format!("none of the {} records map onto the world", records.len())));
    }
    let mut run = start(out, "train", &cfg)?;
    run.set_backend("none".into());
    let mut policy = reference.clone();
    let loss_curve = train(&mut policy, &reference, &world, &pairs, &cfg.dpo).map_err(runtime)?;
    let max = cfg.search.max_depth;
    let report = TrainReport {
        pairs: pairs.len(),
        skipped,
        hallucination_before: greedy_hallucination_rate(&world, &reference, max),
        hallucination_after: greedy_hallucination_rate(&world, &policy, max),
        loss_curve,
    };
    run.write("policy.json", "dpo", &pretty(&policy))?;
    run.write("report.json", "dpo", &pretty(&report))?;
    let first = report.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = report.loss_curve.last().copied().unwrap_or(f64::NAN);
    run.event("finish", json!({ "pairs": report.pairs, "loss_first": first, "loss_last": last }))?;
    run.finish()?;
    eprintln!(
        "{} pairs, loss {first:.4} -> {last:.4}, hallucination {:.4} -> {:.4}",
        report.pairs, report.hallucination_before, report.hallucination_after
    );
    Ok(())
}


pub fn run_loop_cmd(common: &Common, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let world = Arc::new(SimWorld::generate(cfg.world.clone())?);
    let initial = ToyPolicy::initial(&world, cfg.search.max_depth, cfg.world.seed);
    let mut run = start(out, "loop", &cfg)?;
    run.set_backend(SimBackend::new(Arc::clone(&world), Arc::new(initial.clone()), cfg.search.seed).descriptor());
    run.write("world.json", "simulator", format!("{}\n", world.to_json()).as_bytes())?;
    run.write("iter-0/policy.json", "dpo", &pretty(&initial))?;
    let mut io_error: Option<CliError> = None;
    let result = run_loop(&world, initial, &cfg, |o: &IterationOutput| {
        if io_error.is_some() {
            return;
        }
        let m = o.report.iteration;
        let step = (|| -> Result<(), CliError> {
            run.write(&format!("iter-{m}/dataset.jsonl"), "preference", &jsonl(&o.records))?;
            run.write(&format!("iter-{m}/policy.json"), "dpo", &pretty(&o.policy))?;
            run.write(&format!("iter-{m}/report.json"), "dpo", &pretty(&o.report))?;
            run.event(
                "iteration",
                json!({
                    "iteration": m,
                    "pairs": o.report.pairs,
                    "evaluations": o.report.evaluations,
                    "hallucination_before": o.report.hallucination_before,
                    "hallucination_after": o.report.hallucination_after,
                }),
            )?;
            Ok(())
        })();
        eprintln!(
            "iteration {m}: {} pairs, hallucination {:.4} -> {:.4}",
            o.report.pairs, o.report.hallucination_before, o.report.hallucination_after
        );
        io_error = step.err();
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let policy = result.map_err(runtime)?;
    run.write("policy.json", "dpo", &pretty(&policy))?;
    run.event("finish", json!({ "iterations": cfg.dpo.iterations }))?;
    run.finish()?;
    Ok(())
}


#[derive(Debug, Deserialize, Serialize)]
struct CaptionLine {
    #[serde(default)]
    image_ref: Option<String>,
    caption: String,
}

fn load_dict(path: Option<&Path>) -> Result<SynonymDictionary, CliError> {
    match path {
        Some(p) => SynonymDictionary::load(p).map_err(runtime),
        None => Ok(SynonymDictionary::coco()),
    }
}

fn load_aligned(captions: &Path, contexts: &Path) -> Result<(Vec<CaptionLine>, Vec<SceneContext>), CliError> {
    let caps: Vec<CaptionLine> = read_jsonl(captions)?;
    let ctxs: Vec<SceneContext> = read_jsonl(contexts)?;
    if caps.len() != ctxs.len() {
        return Err(runtime(format!("{} captions but {} contexts", caps.len(), ctxs.len())));
    }
    for (i, (c, x)) in caps.iter().zip(&ctxs).enumerate() {
        if let Some(r) = &c.image_ref {
            if r != &x.image_ref {
                return Err(runtime(format!("line {}: caption for {r} is aligned with context {}", i + 1, x.image_ref)));
            }
        }
    }
    Ok((caps, ctxs))
}

pub fn chair(captions: &Path, contexts: &Path, dict: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let dict = load_dict(dict)?;
    let (caps, ctxs) = load_aligned(captions, contexts)?;
    let texts: Vec<&str> = caps.iter().map(|c| c.caption.as_str()).collect();
    let report = chair_metrics(&texts, &ctxs, &dict).map_err(runtime)?;
    let bytes = pretty(&report);
    print!("{}", String::from_utf8_lossy(&bytes));
    if let Some(out) = out {
        let mut run = RunDir::create(out, "chair", String::new(), 0)?;
        run.set_backend("none".into());
        run.write("chair.json", "extraction", &bytes)?;
        run.finish()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SelfVerifyReport {
    before: ChairReport,
    after: ChairReport,
    removed_objects: usize,
    failed_queries: usize,
}

pub fn self_verify(
    common: &Common,
    args: &BackendArgs,
    captions: &Path,
    contexts: &Path,
    dict: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dict = load_dict(dict)?;
    let (caps, ctxs) = load_aligned(captions, contexts)?;
    let (backend, _) = make_backend(&cfg, args, cfg.search.seed)?;
    let mut run = start(out, "self-verify", &cfg)?;
    run.set_backend(backend.descriptor());
    let outcomes: Vec<_> = caps
        .par_iter()
        .zip(&ctxs)
        .map(|(c, x)| self_verify_rewrite(x, &c.caption, &*backend, &dict))
        .collect();
    let lines: Vec<_> = outcomes
        .iter()
        .zip(&ctxs)
        .zip(&caps)
        .map(|((o, x), c)| {
            json!({ "image_ref": x.image_ref, "original": c.caption, "caption": o.text, "removed": o.removed, "errors": o.errors })
        })
        .collect();
    let before_texts: Vec<&str> = caps.iter().map(|c| c.caption.as_str()).collect();
    let after_texts: Vec<&str> = outcomes.iter().map(|o| o.text.as_str()).collect();
    let report = SelfVerifyReport {
        before: chair_metrics(&before_texts, &ctxs, &dict).map_err(runtime)?,
        after: chair_metrics(&after_texts, &ctxs, &dict).map_err(runtime)?,
        removed_objects: outcomes.iter().map(|o| o.removed.len()).sum(),
        failed_queries: outcomes.iter().map(|o| o.errors.len()).sum(),
    };
    run.write("rewritten.jsonl", "extraction", &jsonl(&lines))?;
    run.write("report.json", "extraction", &pretty(&report))?;
    run.event("finish", json!({ "captions": caps.len(), "removed": report.removed_objects }))?;
    run.finish()?;
    eprintln!(
        "CHAIRi {:.4} -> {:.4}, {} objects removed",
        report.before.chair_i, report.after.chair_i, report.removed_objects
    );
    Ok(())
}

pub fn baseline(common: &Common, args: &BackendArgs, scene: Option<usize>, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (backend, world) = make_backend(&cfg, args, cfg.search.seed)?;
    let scenes = pick_scenes(&world, scene)?;
    let beam = BeamConfig {
        beam_width: cfg.beam.beam_width,
        expansion_width: cfg.search.expansion_width,
        max_depth: cfg.search.max_depth,
        temperature: cfg.search.temperature,
    };
    beam.validate()?;
    let mut run = start(out, "baseline", &cfg)?;
    run.set_backend(backend.descriptor());
    let rewarder = crate::rewards::Rewarder::default();
    let results: Vec<_> = scenes
        .par_iter()
        .map(|&s| beam_search_pairs(&world.scenes[s].context, &beam, &*backend, &rewarder))
        .collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for (&s, r) in scenes.iter().zip(results) {
        match r {
            Ok(o) => {
                run.write(&format!("beams/scene-{s:04}.json"), "baseline", &pretty(&o))?;
                run.event("beam", json!({ "scene": s, "finished": o.finished.len(), "evaluations": o.evaluations, "pair": o.pair.is_some() }))?;
                records.extend(o.pair.map(|p| p.record(1)));
            }
            Err(e) => {
                failed += 1;
                run.event("beam", json!({ "scene": s, "error": e.to_string() }))?;
                eprintln!("scene {s}: {e}");
            }
        }
    }
    let mut bytes = Vec::new();
    write_records(&mut bytes, &records)?;
    run.write("dataset.jsonl", "baseline", &bytes)?;
    run.event("finish", json!({ "scenes": scenes.len(), "pairs": records.len(), "failed": failed }))?;
    run.finish()?;
    eprintln!("{} pairs from {} scenes", records.len(), scenes.len());
    if failed == scenes.len() {
        return Err(runtime("every beam search failed"));
    }
    Ok(())
}

/// Indented outline of a tree, one node per line.
pub fn render_tree(tree: &SearchTree) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} | {} | {} nodes, {} evaluations", tree.context.image_ref, tree.backend, tree.nodes.len(), tree.evaluations);
    let mut stack = vec![ROOT];
    while let Some(id) = stack.pop() {
        let n = &tree.nodes[id];
        let indent = "  ".repeat(n.depth);
        let mut flags = String::new();
        for (on, tag) in [(n.complete, " complete"), (n.poisoned, " poisoned"), (n.unexpandable, " unexpandable")] {
            if on {
                flags.push_str(tag);
            }
        }
        let label = n.sentence.as_ref().map_or("<root>", |s| s.text.as_str());
        let value = n.reward.as_ref().map_or("-".to_string(), |r| format!("{:.4}", r.value));
        let _ = writeln!(
            out,
            "{indent}[{id}] N={} Q={:.4} V={:.4} P={:.3} value={value}{flags} {label}",
            n.visits, n.q, n.v, n.prior
        );
        stack.extend(n.children.iter().rev());
    }
    out
}

pub fn dump_tree(path: &Path, format: &str) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let tree = SearchTree::from_json(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    match format {
        "text" => print!("{}", render_tree(&tree)),
        "json" => println!("{}", tree.to_json()),
        other => return Err(CliError::Usage(format!("unknown format `{other}`; expected text or json"))),
    }
    Ok(())
}

pub fn simulate_world(common: &Common, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let world = Arc::new(SimWorld::generate(cfg.world.clone())?);
    let policy = ToyPolicy::initial(&world, cfg.search.max_depth, cfg.world.seed);
    let mut run = start(out, "simulate-world", &cfg)?;
    run.set_backend(SimBackend::new(Arc::clone(&world), Arc::new(policy.clone()), cfg.search.seed).descriptor());
    let captions = greedy_captions(&world, &policy, cfg.search.max_depth);
    let lines: Vec<CaptionLine> = world
        .scenes
        .iter()
        .zip(captions)
        .map(|(s, c)| CaptionLine { image_ref: Some(s.context.image_ref.clone()), caption: c })
        .collect();
    run.write("world.json", "simulator", format!("{}\n", world.to_json()).as_bytes())?;
    run.write("policy.json", "simulator", &pretty(&policy))?;
    run.write("contexts.jsonl", "simulator", &jsonl(&world.contexts()))?;
    run.write("captions.jsonl", "simulator", &jsonl(&lines))?;
    let rate = greedy_hallucination_rate(&world, &policy, cfg.search.max_depth);
    run.event("finish", json!({ "scenes": world.scenes.len(), "greedy_hallucination": rate }))?;
    run.finish()?;
    eprintln!("{} scenes, greedy hallucination rate {rate:.4}", world.scenes.len());
    Ok(())
}
