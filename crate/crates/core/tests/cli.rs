use std::path::Path;
use std::process::{Command, Output};

use oscar_core::cli::RunManifest;
use oscar_core::extraction::{chair, ChairReport, SynonymDictionary};
use oscar_core::rng::sha256_hex;
use oscar_core::simulator::{SimWorld, WorldConfig};

fn oscar(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscar")).current_dir(cwd).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(&path, "# quick run\nscenes = 6\nbudget = 24\niterations = 2\n").unwrap();
    path.display().to_string()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn loop_twice_gives_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    for run in ["run1", "run2"] {
        let out = oscar(tmp.path(), &["loop", "--config", &cfg, "--out", run, "--seed", "7"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(tmp.path().join("run1/manifest.json")).unwrap();
    let b = std::fs::read(tmp.path().join("run2/manifest.json")).unwrap();
    assert_eq!(a, b);
    let m = manifest(&tmp.path().join("run1"));
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.runs[0].seed, 7);
    for art in &m.runs[0].artifacts {
        let bytes = std::fs::read(tmp.path().join("run1").join(&art.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), art.sha256, "{}", art.path);
    }
    for rel in ["iter-1/dataset.jsonl", "iter-2/policy.json", "iter-2/report.json", "policy.json"] {
        assert!(m.runs[0].artifacts.iter().any(|a| a.path == rel), "{rel} not in manifest");
    }
}

#[test]
fn manifest_is_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["simulate-world", "--out", "w", "--set", "scenes=2"];
    assert!(oscar(tmp.path(), &args).status.success());
    let first = manifest(&tmp.path().join("w"));
    assert!(oscar(tmp.path(), &args).status.success());
    let second = manifest(&tmp.path().join("w"));
    assert_eq!(second.runs.len(), 2);
    assert_eq!(second.runs[0], first.runs[0]);
}

#[test]
fn nothing_is_written_outside_out() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oscar(tmp.path(), &["search", "--out", "s", "--scene", "0", "--set", "scenes=2", "--set", "budget=4"]);
    assert!(out.status.success());
    let entries: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, ["s"]);
    let log = std::fs::read_to_string(tmp.path().join("s/events.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["event"].is_string());
    }
}

#[test]
fn usage_errors_exit_one_runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_flag = oscar(tmp.path(), &["search", "--out", "x", "--frobnicate"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_flag.stderr).contains("Usage"));
    assert_eq!(oscar(tmp.path(), &["nonsense"]).status.code(), Some(1));
    assert_eq!(oscar(tmp.path(), &["loop", "--out", "x", "--set", "budget=0"]).status.code(), Some(1));
    assert_eq!(oscar(tmp.path(), &["search", "--out", "x", "--scene", "99", "--set", "scenes=2"]).status.code(), Some(1));
    let missing = oscar(tmp.path(), &["train", "--dataset", "absent.jsonl", "--out", "t"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(oscar(tmp.path(), &["dump-tree", "--tree", "absent.json"]).status.code(), Some(2));
    assert_eq!(oscar(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn chair_prints_the_report_on_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let world = SimWorld::generate(WorldConfig { scenes: 3, ..WorldConfig::default() }).unwrap();
    let captions = ["There is a cat near a dog.", "A boat is visible.", "The colors are bright."];
    let mut caps = String::new();
    let mut ctxs = String::new();
    for (c, s) in captions.iter().zip(&world.scenes) {
        caps.push_str(&serde_json::json!({ "caption": c }).to_string());
        caps.push('\n');
        ctxs.push_str(&serde_json::to_string(&s.context).unwrap());
        ctxs.push('\n');
    }
    std::fs::write(tmp.path().join("c.jsonl"), caps).unwrap();
    std::fs::write(tmp.path().join("s.jsonl"), ctxs).unwrap();
    let dict = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/coco_synonyms.tsv");
    let out = oscar(
        tmp.path(),
        &["chair", "--captions", "c.jsonl", "--contexts", "s.jsonl", "--dict", &dict.display().to_string()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got: ChairReport = serde_json::from_slice(&out.stdout).unwrap();
    let want = chair(&captions, &world.contexts(), &SynonymDictionary::coco()).unwrap();
    assert_eq!(got, want);
    assert_eq!(got.captions, 3);
}

#[test]
fn search_then_build_prefs_then_train() {
    let tmp = tempfile::tempdir().unwrap();
    let set = ["--set", "scenes=4", "--set", "budget=24"];
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(set);
        let out = oscar(tmp.path(), &all);
        assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    };
    run(&["search", "--out", "s"]);
    run(&["build-prefs", "--trees", "s/trees", "--out", "p"]);
    run(&["train", "--dataset", "p/dataset.jsonl", "--out", "t"]);
    run(&["baseline", "--out", "b"]);
    let (count, issues) = oscar_core::preference::lint_dataset(&tmp.path().join("p/dataset.jsonl"), 0.05).unwrap();
    assert!(count > 0);
    assert!(issues.is_empty(), "{issues:?}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("t/report.json")).unwrap()).unwrap();
    let curve = report["loss_curve"].as_array().unwrap();
    assert!((curve[0].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let dump = oscar(tmp.path(), &["dump-tree", "--tree", "s/trees/scene-0000.json"]);
    assert!(String::from_utf8_lossy(&dump.stdout).contains("<root>"));
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    for (dir, w) in [("one", "1"), ("four", "4")] {
        let out = oscar(tmp.path(), &["search", "--out", dir, "--workers", w, "--set", "scenes=4", "--set", "budget=16"]);
        assert!(out.status.success());
    }
    for s in 0..4 {
        let rel = format!("trees/scene-{s:04}.json");
        assert_eq!(
            std::fs::read(tmp.path().join("one").join(&rel)).unwrap(),
            std::fs::read(tmp.path().join("four").join(&rel)).unwrap()
        );
    }
}
