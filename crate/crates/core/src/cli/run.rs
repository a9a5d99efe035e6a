//! Run directories: every artifact goes under `--out`, is listed in an
//! append-only manifest with its digest, and each step is logged as one
//! JSON object per line.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rng::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub stage: String,
    pub sha256: String,
}

/// What one invocation did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub backend: String,
    pub versions: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
}

/// Every invocation that wrote into one run directory, oldest first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub runs: Vec<RunEntry>,
}

pub fn module_versions() -> BTreeMap<String, String> {
    let v = env!("CARGO_PKG_VERSION").to_string();
    ["core", "backend", "simulator", "rewards", "extraction", "mcts", "preference", "dpo", "baseline", "cli"]
        .iter()
        .map(|m| (m.to_string(), v.clone()))
        .collect()
}

pub struct RunDir {
    root: PathBuf,
    entry: RunEntry,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config: String, seed: u64) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            entry: RunEntry {
                command: command.to_string(),
                config,
                seed,
                backend: String::new(),
                versions: module_versions(),
                artifacts: Vec::new(),
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_backend(&mut self, descriptor: String) {
        self.entry.backend = descriptor;
    }

    /// Resolves a relative artifact name inside the run directory.
    fn resolve(&self, rel: &str) -> io::Result<PathBuf> {
        let p = Path::new(rel);
        if p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("artifact path escapes the run directory: {rel}")));
        }
        Ok(self.root.join(p))
    }

    /// Writes an artifact and records its digest.
    pub fn write(&mut self, rel: &str, stage: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.resolve(rel)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.entry.artifacts.retain(|a| a.path != rel);
        self.entry.artifacts.push(Artifact {
            path: rel.to_string(),
            stage: stage.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Appends one structured event to the run log.
    pub fn event(&self, name: &str, fields: Value) -> io::Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("event".into(), Value::String(name.into()));
        if let Value::Object(m) = fields {
            obj.extend(m);
        }
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(EVENTS_FILE))?;
        serde_json::to_writer(&mut f, &Value::Object(obj))?;
        f.write_all(b"\n")
    }

    /// Appends this invocation to the manifest.
    pub fn finish(self) -> io::Result<RunManifest> {
        let path = self.root.join(MANIFEST_FILE);
        let mut manifest: RunManifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => RunManifest::default(),
            Err(e) => return Err(e),
        };
        manifest.runs.push(self.entry);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, text + "\n")?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifacts_stay_inside_and_manifest_appends() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path(), "x", String::new(), 1).unwrap();
        assert!(run.write("../escape.txt", "s", b"no").is_err());
        assert!(run.write("/tmp/abs.txt", "s", b"no").is_err());
        run.write("a/b.txt", "s", b"hello").unwrap();
        run.event("done", serde_json::json!({"n": 1})).unwrap();
        let m = run.finish().unwrap();
        assert_eq!(m.runs[0].artifacts[0].sha256, sha256_hex(b"hello"));
        let run = RunDir::create(dir.path(), "y", String::new(), 1).unwrap();
        assert_eq!(run.finish().unwrap().runs.len(), 2);
    }
}
