use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use chestrag::corpus::{write_embeddings, write_labels, LabelVocabulary, SynthSpec};
use chestrag::http::UreqTransport;
use chestrag::knowledge::{fetch_summary, snapshot_load, snapshot_save, FetchMode, FetchPolicy, DEFAULT_ENDPOINT};
use chestrag::runner::{emit_outputs, prepare_output_dir, ExperimentConfig, Prepared};
use chestrag::{Condition, Error};

#[derive(Parser)]
#[command(name = "chestrag", version, about = "Retrieval-augmented chest X-ray classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured condition.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to these conditions (repeatable).
        #[arg(long = "condition")]
        conditions: Vec<Condition>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; runs are independent so results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite results in a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Write a synthetic corpus as labels.csv and embeddings.csv.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Manage the cached knowledge snapshot.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
}

#[derive(Subcommand)]
enum SnapshotAction {
    /// Fetch summaries for each term (one per line) and store them.
    Refresh {
        #[arg(long)]
        terms: PathBuf,
        #[arg(long, default_value = "snapshot.jsonl")]
        snapshot: PathBuf,
        #[arg(long, default_value = DEFAULT_ENDPOINT)]
        endpoint: String,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    counts: Vec<usize>,
    dim: usize,
    separation: f64,
    seed: u64,
    #[serde(default)]
    classes: Option<Vec<String>>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, conditions, runs, epochs, seed, jobs, out, force } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(Error::from)?;
            if !conditions.is_empty() {
                cfg.conditions = conditions;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let dir = cfg
                .out
                .clone()
                .ok_or_else(|| Failure::Config("no output directory (set `out` or pass --out)".into()))?;
            cfg.validate().map_err(Error::from)?;
            prepare_output_dir(&dir, force).map_err(Error::from)?;
            let prepared = Prepared::new(cfg.clone())?;
            log::info!("config digest {}", prepared.digest());
            let artifacts = prepared.run_suite(jobs.max(1))?;
            emit_outputs(&artifacts, &dir, &cfg).map_err(Error::from)?;
            println!("{}", dir.join("summary.csv").display());
            Ok(())
        }
        Command::Synth { spec, out } => {
            let text =
                std::fs::read_to_string(&spec).map_err(|e| Failure::Config(format!("{}: {e}", spec.display())))?;
            let file: SynthFile =
                serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", spec.display())))?;
            let vocab = match file.classes {
                Some(c) => LabelVocabulary::new(c, Vec::<String>::new()),
                None => Ok(LabelVocabulary::default()),
            }
            .map_err(|e| Failure::Config(e.to_string()))?;
            let spec = SynthSpec { counts: file.counts, dim: file.dim, separation: file.separation, seed: file.seed };
            let ds = spec.generate(&vocab).map_err(|e| Failure::Config(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            write_labels(&ds, &out.join("labels.csv")).map_err(Error::from)?;
            write_embeddings(&ds, &out.join("embeddings.csv")).map_err(Error::from)?;
            println!("{} samples written to {}", ds.len(), out.display());
            Ok(())
        }
        Command::Snapshot { action: SnapshotAction::Refresh { terms, snapshot, endpoint, timeout } } => {
            refresh(&terms, &snapshot, endpoint, timeout)
        }
    }
}

fn refresh(terms: &Path, snapshot: &Path, endpoint: String, timeout: f64) -> Result<(), Failure> {
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(Failure::Config(format!("timeout must be positive, got {timeout}")));
    }
    let text = std::fs::read_to_string(terms).map_err(|e| Failure::Config(format!("{}: {e}", terms.display())))?;
    let mut store = snapshot_load(snapshot).map_err(Error::from)?;
    let policy = FetchPolicy { mode: FetchMode::Refresh, endpoint, timeout_secs: timeout };
    let transport = UreqTransport;
    let mut failed = 0;
    for term in text.lines().map(str::trim).filter(|t| !t.is_empty() && !t.starts_with('#')) {
        match fetch_summary(term, &policy, &mut store, &transport) {
            Ok(_) => log::info!("fetched `{term}`"),
            Err(e) => {
                eprintln!("warning: `{term}`: {e}");
                failed += 1;
            }
        }
    }
    snapshot_save(&store, snapshot).map_err(Error::from)?;
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} term(s) could not be fetched; the rest were saved")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
