//! Result files.
//!
//! ```text
//! <out>/config.resolved
//! <out>/summary.csv
//! <out>/<condition>/run_<NNN>/metrics.jsonl
//! <out>/<condition>/run_<NNN>/reliability.csv
//! <out>/<condition>/run_<NNN>/config.resolved
//! ```
//!
//! Floats carry 9 significant digits and every file names the config digest,
//! so identical configs produce identical trees.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{ExperimentConfig, RunArtifacts, RunnerError};
use crate::metrics::{write_reliability_csv, EpochMetrics};
use crate::numfmt::fmt9;
use crate::Condition;

pub const SUMMARY_HEADER: &str = "condition,runs,final_accuracy_mean,final_accuracy_std,total_hallucinations_mean,total_hallucinations_std,final_ece_mean,final_ece_std,config_digest";

const FUSION_NOTES: [(&str, &str); 4] = [
    ("image_rag_fusion", "convex mix (1 - lambda) * classifier + lambda * k-neighbour label vote"),
    (
        "text_rag_fusion",
        "classifier * prior^tau renormalised, prior = 1 + matched class keywords in retrieved summaries",
    ),
    ("image_rag_source", "neighbours come from the training split only"),
    ("hallucination", "backend reply whose earliest class mention is excluded or absent"),
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn write(path: &Path, body: &str) -> Result<(), RunnerError> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    config_digest: &'a str,
    condition: Condition,
    run: u32,
    run_seed: u64,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

fn resolved_with_run(config: &ExperimentConfig, digest: &str, run: Option<&RunArtifacts>) -> String {
    let mut v: serde_json::Value =
        serde_json::from_str(&config.resolved_json(run.map(|r| r.condition))).expect("valid json");
    let map = v.as_object_mut().expect("object");
    map.insert("config_digest".into(), digest.into());
    if let Some(r) = run {
        map.insert("run_index".into(), r.run_index.into());
        map.insert("run_seed".into(), r.run_seed.into());
    }
    let notes: serde_json::Map<String, serde_json::Value> =
        FUSION_NOTES.iter().map(|(k, v)| (k.to_string(), serde_json::Value::from(*v))).collect();
    map.insert("notes".into(), notes.into());
    let mut s = serde_json::to_string_pretty(&v).expect("serializes");
    s.push('\n');
    s
}

/// Check that `dir` can receive outputs. A non-empty directory needs
/// `force`, in which case the files this tool writes are removed first.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), RunnerError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(RunnerError::OutputNotEmpty(dir.display().to_string()));
            }
            for c in Condition::ALL {
                let p = dir.join(c.as_str());
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(|e| io_err(&p, e))?;
                }
            }
            for f in ["summary.csv", "config.resolved"] {
                let p = dir.join(f);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
                }
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Per-condition aggregate over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub runs: usize,
    pub final_accuracy: (f64, f64),
    /// Absent when no backend produced parsed outcomes.
    pub total_hallucinations: Option<(f64, f64)>,
    pub final_ece: (f64, f64),
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(artifacts: &[RunArtifacts]) -> Vec<ConditionSummary> {
    let mut conditions: Vec<Condition> = artifacts.iter().map(|a| a.condition).collect();
    conditions.sort();
    conditions.dedup();
    conditions
        .into_iter()
        .map(|condition| {
            let runs: Vec<&RunArtifacts> = artifacts.iter().filter(|a| a.condition == condition).collect();
            let last = |a: &RunArtifacts| a.epochs.last().expect("runs have at least one epoch").clone();
            let acc: Vec<f64> = runs.iter().map(|a| last(a).accuracy).collect();
            let ece: Vec<f64> = runs.iter().map(|a| last(a).ece).collect();
            let hall: Option<Vec<f64>> = runs
                .iter()
                .map(|a| {
                    a.epochs
                        .iter()
                        .map(|m| m.hallucinations.as_ref().map(|h| h.count))
                        .sum::<Option<usize>>()
                        .map(|t| t as f64)
                })
                .collect();
            ConditionSummary {
                condition,
                runs: runs.len(),
                final_accuracy: mean_std(&acc),
                total_hallucinations: hall.map(|h| mean_std(&h)),
                final_ece: mean_std(&ece),
            }
        })
        .collect()
}

/// Write the full result tree for `artifacts` into `dir`.
pub fn emit_outputs(artifacts: &[RunArtifacts], dir: &Path, config: &ExperimentConfig) -> Result<(), RunnerError> {
    let digest = config.digest();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join("config.resolved"), &resolved_with_run(config, &digest, None))?;

    for a in artifacts {
        let run_dir = dir.join(a.condition.as_str()).join(format!("run_{:03}", a.run_index));
        fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;

        let mut jsonl = String::new();
        for m in &a.epochs {
            let line = MetricsLine {
                config_digest: &a.config_digest,
                condition: a.condition,
                run: a.run_index,
                run_seed: a.run_seed,
                metrics: m,
            };
            jsonl.push_str(&serde_json::to_string(&line).expect("metrics serialize"));
            jsonl.push('\n');
        }
        write(&run_dir.join("metrics.jsonl"), &jsonl)?;

        let mut csv = format!("# config_digest={}\n", a.config_digest).into_bytes();
        write_reliability_csv(&a.reliability, &mut csv).map_err(|e| io_err(&run_dir, e))?;
        let csv_path = run_dir.join("reliability.csv");
        fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

        write(&run_dir.join("config.resolved"), &resolved_with_run(config, &digest, Some(a)))?;
    }

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for s in summarize(artifacts) {
        let (hm, hs) = match s.total_hallucinations {
            Some((m, sd)) => (fmt9(m), fmt9(sd)),
            None => (String::new(), String::new()),
        };
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.condition,
            s.runs,
            fmt9(s.final_accuracy.0),
            fmt9(s.final_accuracy.1),
            hm,
            hs,
            fmt9(s.final_ece.0),
            fmt9(s.final_ece.1),
            digest
        ));
    }
    write(&dir.join("summary.csv"), &summary)
}
