use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunnerError;
use crate::corpus::{LabelVocabulary, SynthSpec};
use crate::llm::BackendConfig;
use crate::sampler::{ClassWeightScheme, SamplerScheme};
use crate::seed::to_hex;
use crate::trainer::{AdamConfig, TrainConfig};
use crate::Condition;

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Files {
        labels: PathBuf,
        embeddings: PathBuf,
        #[serde(default)]
        dim: Option<usize>,
    },
}

/// Optional overrides for the bundled knowledge snapshot and keyword table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeConfig {
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
}

/// Full description of an experiment suite. Every field has a default, and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub classes: Vec<String>,
    pub excluded: Vec<String>,
    pub data: DataSource,
    pub fractions: [f64; 3],
    pub split_seed: u64,
    pub conditions: Vec<Condition>,
    pub runs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub k: usize,
    pub lambda: f64,
    pub tau: f64,
    /// How many top-ranked classes feed their keywords to text retrieval.
    pub text_query_classes: usize,
    pub bins: usize,
    pub sampler: SamplerScheme,
    pub class_weights: ClassWeightScheme,
    pub adam: AdamConfig,
    pub backend: BackendConfig,
    pub knowledge: KnowledgeConfig,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let vocab = LabelVocabulary::default();
        Self {
            classes: vocab.classes().to_vec(),
            excluded: vocab.excluded().iter().cloned().collect(),
            data: DataSource::Synthetic(SynthSpec {
                counts: vec![131, 131, 131, 131, 130, 130],
                dim: 16,
                separation: 10.0,
                seed: 1,
            }),
            fractions: [0.8, 0.1, 0.1],
            split_seed: 0,
            conditions: Condition::ALL.to_vec(),
            runs: 20,
            epochs: 20,
            batch_size: 32,
            batches_per_epoch: 20,
            k: crate::retrieval::DEFAULT_K,
            lambda: 0.5,
            tau: 1.0,
            text_query_classes: 2,
            bins: crate::metrics::DEFAULT_BINS,
            sampler: SamplerScheme::Weighted,
            class_weights: ClassWeightScheme::Uniform,
            adam: AdamConfig::default(),
            backend: BackendConfig::default(),
            knowledge: KnowledgeConfig::default(),
            seed: 0,
            out: None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> RunnerError {
    RunnerError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunnerError> {
        serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Files { labels, embeddings, .. } = &mut self.data {
            fix(labels);
            fix(embeddings);
        }
        if let Some(p) = &mut self.knowledge.snapshot {
            fix(p);
        }
        if let Some(p) = &mut self.knowledge.keywords {
            fix(p);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
    }

    pub fn vocabulary(&self) -> Result<LabelVocabulary, RunnerError> {
        LabelVocabulary::new(self.classes.clone(), self.excluded.clone()).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            batches_per_epoch: self.batches_per_epoch,
            adam: self.adam,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        self.vocabulary()?;
        if self.runs == 0 {
            return Err(cfg_err("runs must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(cfg_err("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size must be at least 1"));
        }
        if self.k == 0 {
            return Err(cfg_err("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(cfg_err(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(cfg_err(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        if self.bins == 0 {
            return Err(cfg_err("bins must be at least 1"));
        }
        if self.text_query_classes == 0 {
            return Err(cfg_err("text_query_classes must be at least 1"));
        }
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| f.is_nan() || *f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(cfg_err(format!("fractions must be positive and sum to 1, got {:?}", self.fractions)));
        }
        if self.conditions.is_empty() {
            return Err(cfg_err("at least one condition is required"));
        }
        let mut seen = self.conditions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.conditions.len() {
            return Err(cfg_err("conditions must not repeat"));
        }
        self.adam.validate().map_err(cfg_err)?;
        self.backend.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    /// Effective configuration as pretty JSON with `conditions` narrowed to
    /// `only` when given, and without the output directory.
    pub fn resolved_json(&self, only: Option<Condition>) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let map = v.as_object_mut().expect("config is an object");
        map.remove("out");
        if let Some(c) = only {
            map.insert("conditions".into(), serde_json::json!([c.as_str()]));
        }
        serde_json::to_string_pretty(&v).expect("config serializes")
    }

    /// SHA-256 of the canonical config with the condition list and output
    /// directory removed, so a condition's results do not depend on which
    /// other conditions ran alongside it.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let map = v.as_object_mut().expect("config is an object");
        map.remove("out");
        map.remove("conditions");
        to_hex(&Sha256::digest(v.to_string().as_bytes()))
    }
}
