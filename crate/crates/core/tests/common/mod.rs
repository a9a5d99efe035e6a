#![allow(dead_code)]

use std::path::PathBuf;

pub const REGENERATE_ENV: &str = "OSCAR_REGENERATE_FIXTURES";

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Fixture files are rewritten instead of checked when this is set.
pub fn regenerate() -> bool {
    std::env::var_os(REGENERATE_ENV).is_some()
}

pub fn read_jsonl(rel: &str) -> Vec<serde_json::Value> {
    std::fs::read_to_string(fixture(rel))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
