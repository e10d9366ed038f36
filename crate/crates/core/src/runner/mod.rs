//! Experiment orchestration: conditions x seeded runs x epochs.

mod config;
mod output;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{self, class_histogram, exclude_classes, stratified_split, Dataset, LabelVocabulary, SplitResult};
use crate::knowledge::{snapshot_load, SnapshotStore};
use crate::llm::{build_prompt, parse_label, LlmBackend, PromptContext};
use crate::metrics::{argmax, EpochMetrics, PredictionRecord, ReliabilityBin};
use crate::retrieval::{
    fuse_image, fuse_text, neighbor_evidence, neighbor_vote, retrieve_snippets, text_prior, ContextPrior, Evidence,
    FlatIndex, FusedPrediction, KeywordTable, RetrievalError,
};
use crate::sampler::{class_loss_weights, sample_weights, ClassWeights, SampleWeights, SamplerScheme, WeightedSampler};
use crate::seed::{self, Stream};
use crate::trainer::{pool_sample, train_epoch, AdamState, ClassifierHead, Features};
use crate::{Condition, Result};

pub use config::{DataSource, ExperimentConfig, KnowledgeConfig};
pub use output::{emit_outputs, mean_std, prepare_output_dir, summarize, ConditionSummary, SUMMARY_HEADER};

#[derive(Debug, Error, PartialEq)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputNotEmpty(String),
}

/// Everything a run of one condition needs, for one run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub condition: Condition,
    pub run_index: u32,
    pub run_seed: u64,
    pub config_digest: String,
    pub epochs: Vec<EpochMetrics>,
    /// Reliability bins of the final epoch.
    pub reliability: Vec<ReliabilityBin>,
}

/// Data, split, retrieval stores and backend shared by all runs of a suite.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub split: SplitResult,
    pooled: Vec<Vec<f64>>,
    labels: Vec<usize>,
    sample_weights: SampleWeights,
    class_weights: ClassWeights,
    index: FlatIndex,
    snapshot: SnapshotStore,
    keywords: KeywordTable,
    backend: Option<Box<dyn LlmBackend>>,
    digest: String,
}

fn load_data(config: &ExperimentConfig, vocab: &LabelVocabulary) -> Result<Dataset> {
    let ds = match &config.data {
        DataSource::Synthetic(spec) => spec.generate(vocab)?,
        DataSource::Files { labels, embeddings, dim } => corpus::load_dataset(labels, embeddings, vocab, *dim)?,
    };
    Ok(exclude_classes(&ds, &config.excluded))
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocabulary()?;
        let dataset = load_data(&config, &vocab)?;
        let split = stratified_split(&dataset, config.fractions, config.split_seed)?;
        let pooled: Vec<Vec<f64>> = dataset.samples().iter().map(pool_sample).collect();
        let labels = dataset.labels();

        let train_hist = class_histogram(&dataset, &split.train)?;
        let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
        let sample_weights = match config.sampler {
            SamplerScheme::Weighted => sample_weights(&train_hist, &split.train, &train_labels)?,
            SamplerScheme::Uniform => SampleWeights::uniform(split.train.clone()),
        };
        let class_weights = class_loss_weights(&train_hist, &config.class_weights)?;
        let index = FlatIndex::build(&dataset, &split.train)?;

        let snapshot = match &config.knowledge.snapshot {
            Some(p) => snapshot_load(p)?,
            None => SnapshotStore::bundled(),
        };
        let keywords = match &config.knowledge.keywords {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| RunnerError::Io { path: p.display().to_string(), message: e.to_string() })?;
                KeywordTable::from_json(dataset.vocabulary(), &text)?
            }
            None => KeywordTable::default_for(dataset.vocabulary())?,
        };
        let backend = config.backend.build()?;
        let digest = config.digest();
        Ok(Self {
            config,
            dataset,
            split,
            pooled,
            labels,
            sample_weights,
            class_weights,
            index,
            snapshot,
            keywords,
            backend,
            digest,
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    fn features(&self) -> Features<'_> {
        Features { pooled: &self.pooled, labels: &self.labels }
    }

    fn text_query(&self, probs: &[f64]) -> Vec<String> {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        // descending probability, lower index first on ties
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let vocab = self.dataset.vocabulary();
        order
            .into_iter()
            .take(self.config.text_query_classes)
            .flat_map(|c| {
                std::iter::once(vocab.name(c).to_string()).chain(self.keywords.class_keywords(c).iter().cloned())
            })
            .collect()
    }

    fn fuse(&self, condition: Condition, x: &[f64], p: Vec<f64>) -> Result<(FusedPrediction, PromptContext)> {
        let vocab = self.dataset.vocabulary();
        match condition {
            Condition::Baseline => Ok((FusedPrediction::baseline(p), PromptContext::None)),
            Condition::ImageRag => {
                let neighbors = self.index.knn_query(x, self.config.k)?;
                let q = neighbor_vote(&neighbors, &self.index, vocab.len());
                let names = neighbors.iter().map(|n| vocab.name(self.index.label(n.position)).to_string()).collect();
                let fused = fuse_image(&p, &q, self.config.lambda, neighbor_evidence(&neighbors, &self.index))?;
                Ok((fused, PromptContext::Neighbors(names)))
            }
            Condition::TextRag => {
                let snippets = match retrieve_snippets(&self.snapshot, &self.text_query(&p)) {
                    Ok(s) => s,
                    Err(RetrievalError::EmptySnapshot) => Vec::new(),
                    Err(e) => return Err(e.into()),
                };
                let prior = if snippets.is_empty() {
                    ContextPrior::uniform(vocab.len())
                } else {
                    text_prior(&snippets, &self.keywords)
                };
                let evidence = Evidence::Snippets { keywords: snippets.iter().map(|s| s.keyword.clone()).collect() };
                let fused = fuse_text(&p, &prior, self.config.tau, evidence)?;
                Ok((fused, PromptContext::Snippets(snippets.into_iter().map(|s| s.summary).collect())))
            }
        }
    }

    /// Validation-set predictions of `head` under `condition`.
    pub fn evaluate(&self, head: &ClassifierHead, condition: Condition) -> Result<Vec<PredictionRecord>> {
        let vocab = self.dataset.vocabulary();
        self.split
            .val
            .iter()
            .map(|&i| {
                let sample = self.dataset.sample(i);
                let x = &self.pooled[i];
                let p = head.forward(x)?;
                let (fused, context) = self.fuse(condition, x, p)?;
                let outcome = match &self.backend {
                    None => None,
                    Some(backend) => {
                        let head_label = vocab.name(argmax(&fused.probs));
                        let req = build_prompt(sample.id(), x, condition, context, vocab, head_label)?;
                        Some(parse_label(&backend.request(&req)?, vocab))
                    }
                };
                Ok(PredictionRecord::new(sample.id(), sample.label(), fused.probs, outcome))
            })
            .collect()
    }

    /// Train from scratch with `run_seed` and evaluate every epoch.
    pub fn run_condition(&self, condition: Condition, run_index: u32, run_seed: u64) -> Result<RunArtifacts> {
        let vocab = self.dataset.vocabulary();
        let train = self.config.train_config();
        let mut head = ClassifierHead::init(vocab.len(), self.dataset.dim(), &mut seed::stream(run_seed, Stream::Init));
        let mut adam = AdamState::new(head.params().len(), train.adam);
        let mut rng = seed::stream(run_seed, Stream::Sampler);
        let sampler = WeightedSampler::new(&self.sample_weights)?;

        let mut epochs = Vec::with_capacity(train.epochs);
        let mut reliability = Vec::new();
        for epoch in 1..=train.epochs {
            let log = train_epoch(
                &mut head,
                &mut adam,
                self.features(),
                &sampler,
                &self.class_weights,
                &train,
                &mut rng,
                |h| self.evaluate(h, condition),
            )?;
            let (metrics, bins) = EpochMetrics::compute(epoch, &log.records, self.config.bins, log.mean_loss)?;
            epochs.push(metrics);
            reliability = bins;
        }
        Ok(RunArtifacts { condition, run_index, run_seed, config_digest: self.digest.clone(), epochs, reliability })
    }

    /// All runs of all configured conditions, ordered by (condition, run index).
    pub fn run_suite(&self, jobs: usize) -> Result<Vec<RunArtifacts>> {
        let mut conditions = self.config.conditions.clone();
        conditions.sort();
        let work: Vec<(Condition, u32)> =
            conditions.iter().flat_map(|&c| (0..self.config.runs as u32).map(move |i| (c, i))).collect();
        let run = |&(c, i): &(Condition, u32)| self.run_condition(c, i, seed::run_seed(self.config.seed, c, i));
        if jobs <= 1 {
            return work.iter().map(run).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| RunnerError::Config(format!("thread pool: {e}")))?;
        pool.install(|| work.par_iter().map(run).collect())
    }
}

/// Convenience wrapper: prepare data for `config` and run one condition.
pub fn run_condition(config: &ExperimentConfig, condition: Condition, run_seed: u64) -> Result<RunArtifacts> {
    Prepared::new(config.clone())?.run_condition(condition, 0, run_seed)
}

pub fn run_suite(config: &ExperimentConfig, jobs: usize) -> Result<Vec<RunArtifacts>> {
    Prepared::new(config.clone())?.run_suite(jobs)
}
