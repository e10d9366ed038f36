//! Corpus handling: vocabulary, samples, filtering, exclusion, stratified
//! splits and class statistics.

mod io;
mod synth;

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed::{self, Stream};

pub use io::{load_dataset, load_embeddings, load_labels, write_embeddings, write_labels, EmbeddingTable, LabelRows};
pub use synth::{synth_generate, SynthSpec};

/// Number of token vectors the image encoder emits per study.
pub const TOKENS_PER_SAMPLE: usize = 8;

/// Separator between findings in raw NIH label strings.
pub const LABEL_SEPARATOR: char = '|';

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("invalid vocabulary: {0}")]
    BadVocabulary(String),
    #[error("sample `{id}`: {reason}")]
    BadSample { id: String, reason: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("index {index} out of range for dataset of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("no embedding rows for `{0}`")]
    MissingEmbedding(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("line {line}: expected {expected} features, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("`{id}` has {found} token rows, expected {TOKENS_PER_SAMPLE}")]
    IncompleteTokens { id: String, found: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Ordered admissible classes plus the names removed from the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    classes: Vec<String>,
    excluded: BTreeSet<String>,
}

impl LabelVocabulary {
    pub fn new<I, J, S, T>(classes: I, excluded: J) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let excluded: BTreeSet<String> = excluded.into_iter().map(Into::into).collect();
        if classes.is_empty() {
            return Err(CorpusError::BadVocabulary("no classes".into()));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.trim().is_empty() {
                return Err(CorpusError::BadVocabulary("empty class name".into()));
            }
            if c.contains(LABEL_SEPARATOR) {
                return Err(CorpusError::BadVocabulary(format!("class `{c}` contains '|'")));
            }
            if !seen.insert(c.as_str()) {
                return Err(CorpusError::BadVocabulary(format!("duplicate class `{c}`")));
            }
            if excluded.contains(c) {
                return Err(CorpusError::BadVocabulary(format!("class `{c}` is both admissible and excluded")));
            }
        }
        Ok(Self { classes, excluded })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn excluded(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self::new(["Atelectasis", "Effusion", "Emphysema", "Pneumothorax", "Mass", "No Finding"], ["Pneumonia"])
            .expect("default vocabulary is valid")
    }
}

/// One study: identifier, class index and its 8 x D token block (row major).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    id: String,
    label: usize,
    dim: usize,
    tokens: Vec<f64>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, label: usize, dim: usize, tokens: Vec<f64>) -> Result<Self, CorpusError> {
        let id = id.into();
        if dim == 0 || tokens.len() != TOKENS_PER_SAMPLE * dim {
            return Err(CorpusError::BadSample {
                id,
                reason: format!("token block has {} values, expected {TOKENS_PER_SAMPLE} x {dim}", tokens.len()),
            });
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::BadSample { id, reason: "non-finite token value".into() });
        }
        Ok(Self { id, label, dim, tokens })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major 8 x D token values.
    pub fn tokens(&self) -> &[f64] {
        &self.tokens
    }

    pub fn token_row(&self, t: usize) -> &[f64] {
        &self.tokens[t * self.dim..(t + 1) * self.dim]
    }
}

/// A labelled corpus sharing one vocabulary and embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocabulary: LabelVocabulary,
    samples: Vec<SampleRecord>,
    dim: usize,
}

impl Dataset {
    pub fn new(vocabulary: LabelVocabulary, samples: Vec<SampleRecord>, dim: usize) -> Result<Self, CorpusError> {
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.dim != dim {
                return Err(CorpusError::BadSample {
                    id: s.id.clone(),
                    reason: format!("width {} differs from dataset width {dim}", s.dim),
                });
            }
            if s.label >= vocabulary.len() {
                return Err(CorpusError::BadSample {
                    id: s.id.clone(),
                    reason: format!("label index {} outside vocabulary", s.label),
                });
            }
            if !ids.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { vocabulary, samples, dim })
    }

    pub fn vocabulary(&self) -> &LabelVocabulary {
        &self.vocabulary
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &SampleRecord {
        &self.samples[index]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// SHA-256 over vocabulary, width and every sample's id, label and token bits.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for c in &self.vocabulary.classes {
            h.update(c.as_bytes());
            h.update([0]);
        }
        h.update([1]);
        for c in &self.vocabulary.excluded {
            h.update(c.as_bytes());
            h.update([0]);
        }
        h.update((self.dim as u64).to_le_bytes());
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update([0]);
            h.update((s.label as u64).to_le_bytes());
            for v in &s.tokens {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Keep only rows whose raw label names exactly one finding.
pub fn filter_single_label<I, S, T>(rows: I) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (S, T)>,
    S: Into<String>,
    T: AsRef<str>,
{
    rows.into_iter()
        .filter_map(|(id, raw)| {
            let mut names = raw.as_ref().split(LABEL_SEPARATOR).map(str::trim).filter(|n| !n.is_empty());
            match (names.next(), names.next()) {
                (Some(only), None) => Some((id.into(), only.to_string())),
                _ => None,
            }
        })
        .collect()
}

/// Drop every sample whose class is in `excluded` and move those classes from
/// the admissible list to the excluded set, re-indexing the survivors.
pub fn exclude_classes<S: AsRef<str>>(dataset: &Dataset, excluded: &[S]) -> Dataset {
    let drop: BTreeSet<&str> = excluded.iter().map(AsRef::as_ref).collect();
    if drop.is_empty() {
        return dataset.clone();
    }
    let old = &dataset.vocabulary;
    let mut remap = vec![None; old.len()];
    let mut classes = Vec::new();
    for (i, c) in old.classes.iter().enumerate() {
        if !drop.contains(c.as_str()) {
            remap[i] = Some(classes.len());
            classes.push(c.clone());
        }
    }
    let mut excluded_set = old.excluded.clone();
    excluded_set.extend(drop.iter().map(|s| s.to_string()));
    let samples = dataset
        .samples
        .iter()
        .filter_map(|s| remap[s.label].map(|label| SampleRecord { label, ..s.clone() }))
        .collect();
    Dataset { vocabulary: LabelVocabulary { classes, excluded: excluded_set }, samples, dim: dataset.dim }
}

/// Disjoint train/validation/test index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Per-class share of `n` samples given to a split with fraction `f`.
///
/// The small epsilon keeps decimal fractions such as `0.29 * 100` from
/// flooring one short because of binary rounding.
pub fn floor_share(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Stratified split: every class is shuffled with the seeded generator and
/// cut into `floor(f_train * n)`, `floor(f_val * n)` and the remainder.
pub fn stratified_split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<SplitResult, CorpusError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(fractions));
    }
    if dataset.samples.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let c = dataset.vocabulary.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(CorpusError::EmptyClass(dataset.vocabulary.classes[empty].clone()));
    }
    let mut rng = seed::stream(seed, Stream::Split);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = floor_share(fractions[0], n);
        let n_val = floor_share(fractions[1], n).min(n - n_train);
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..n_train + n_val]);
        test.extend_from_slice(&members[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitResult { train, val, test, seed })
}

/// Per-class sample counts aligned with the vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

pub fn class_histogram(dataset: &Dataset, indices: &[usize]) -> Result<ClassHistogram, CorpusError> {
    let mut counts = vec![0; dataset.vocabulary.len()];
    for &i in indices {
        let s = dataset.samples.get(i).ok_or(CorpusError::IndexOutOfRange { index: i, len: dataset.len() })?;
        counts[s.label] += 1;
    }
    Ok(ClassHistogram { counts })
}

/// Share of the data held by the majority class.
pub fn imbalance_ratio(hist: &ClassHistogram) -> Result<f64, CorpusError> {
    let total = hist.total();
    if total == 0 {
        return Err(CorpusError::EmptyHistogram);
    }
    let max = hist.counts.iter().copied().max().unwrap_or(0);
    Ok(max as f64 / total as f64)
}
