//! The `oscar` command line. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

mod commands;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use run::{module_versions, Artifact, RunDir, RunEntry, RunManifest, EVENTS_FILE, MANIFEST_FILE};

use crate::config::{ConfigError, KeyValues, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "oscar", version, about = "Hallucination-aware preference data by sentence-level tree search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for per-scene parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct BackendArgs {
    /// Model-serving endpoint; falls back to OSCAR_ENDPOINT. Without one the
    /// simulator answers.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "oscar-sim")]
    pub model: String,
    /// Estimate choice probabilities from sampled answers when the endpoint
    /// returns no log-probabilities.
    #[arg(long)]
    pub vote_fallback: bool,
    /// Simulator world JSON; generated from the config when absent.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Toy policy JSON for the simulator; the initial policy when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search one scene, or every scene, and dump the trees.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        scene: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract preference pairs from a directory of tree dumps.
    BuildPrefs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trees: PathBuf,
        #[arg(long, default_value_t = 1)]
        iteration: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// One DPO training run of the toy policy on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search, extract, train; repeated for the configured iterations.
    Loop {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// CHAIR metrics for captions against ground truth.
    Chair {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        contexts: PathBuf,
        /// Synonym TSV; the built-in COCO dictionary when absent.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite captions by removing objects the model itself rejects.
    SelfVerify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Beam-search preference pairs scored by process reward alone.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        scene: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a tree dump for inspection.
    DumpTree {
        #[arg(long)]
        tree: PathBuf,
        /// `text` or `json`.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Generate the simulator world, its initial policy, and greedy captions.
    SimulateWorld {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(e) => CliError::Runtime(format!("reading config: {e}")),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Config file, then `--set` overrides, then `--seed`.
pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut kv = match &common.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        kv.set("seed", &seed.to_string());
    }
    Ok(RunConfig::from_key_values(&kv)?)
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    use commands as c;
    match cmd {
        Command::Search { common, backend, scene, out } => {
            with_workers(common.workers, || c::search(&common, &backend, scene, &out))?
        }
        Command::BuildPrefs { common, trees, iteration, out } => c::build_prefs(&common, &trees, iteration, &out),
        Command::Train { common, backend, dataset, out } => c::train_cmd(&common, &backend, &dataset, &out),
        Command::Loop { common, out } => with_workers(common.workers, || c::run_loop_cmd(&common, &out))?,
        Command::Chair { captions, contexts, dict, out } => c::chair(&captions, &contexts, dict.as_deref(), out.as_deref()),
        Command::SelfVerify { common, backend, captions, contexts, dict, out } => {
            c::self_verify(&common, &backend, &captions, &contexts, dict.as_deref(), &out)
        }
        Command::Baseline { common, backend, scene, out } => {
            with_workers(common.workers, || c::baseline(&common, &backend, scene, &out))?
        }
        Command::DumpTree { tree, format } => c::dump_tree(&tree, &format),
        Command::SimulateWorld { common, out } => c::simulate_world(&common, &out),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
