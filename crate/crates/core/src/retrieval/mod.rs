//! Retrieval-augmented prediction.
//!
//! Image retrieval: an exact flat index over L2-normalised pooled training
//! embeddings; the labels of the `k` nearest studies vote, and the vote is
//! mixed into the classifier distribution as `(1 - lambda) p + lambda q`.
//!
//! Text retrieval lives in [`text`]: keyword-matched knowledge snippets
//! produce a per-class prior that reweights the classifier distribution.
//!
//! Both fusion rules are explicit stand-ins for feeding evidence to a
//! language model and are labelled as such in run outputs.

pub mod text;

use std::cmp::Ordering;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::trainer::pool_sample;
use crate::Condition;

pub use text::{fuse_text, retrieve_snippets, text_prior, ContextPrior, KeywordTable, KnowledgeSnippet};

/// Default neighbour count.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("zero vector for `{0}`")]
    ZeroVector(String),
    #[error("k = {k} exceeds index size {len}")]
    KTooLarge { k: usize, len: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query has {found} dimensions, index has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("tau must be finite and >= 0, got {0}")]
    BadTau(f64),
    #[error("knowledge snapshot is empty")]
    EmptySnapshot,
    #[error("no keywords for class `{0}`")]
    MissingKeywords(String),
    #[error("invalid keyword table: {0}")]
    BadKeywordTable(String),
    #[error("distributions differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

fn l2_normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// Exact nearest-neighbour index over unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    vectors: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<String>,
}

/// A stored vector and its squared L2 distance to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub position: usize,
    pub distance: f64,
}

impl FlatIndex {
    /// Index the pooled, normalised embeddings of the training samples.
    pub fn build(dataset: &Dataset, train: &[usize]) -> Result<Self, RetrievalError> {
        if train.is_empty() {
            return Err(RetrievalError::EmptyTrainSet);
        }
        let entries = train.iter().map(|&i| {
            let s = dataset.sample(i);
            (s.id().to_string(), s.label(), pool_sample(s))
        });
        Self::from_entries(dataset.dim(), entries)
    }

    /// Build from raw `(id, label, vector)` entries; vectors are normalised.
    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (String, usize, Vec<f64>)>,
    {
        let mut index = Self { dim, vectors: Vec::new(), labels: Vec::new(), ids: Vec::new() };
        for (id, label, v) in entries {
            if v.len() != dim {
                return Err(RetrievalError::DimensionMismatch { expected: dim, found: v.len() });
            }
            let unit = l2_normalized(&v).ok_or_else(|| RetrievalError::ZeroVector(id.clone()))?;
            index.vectors.extend(unit);
            index.labels.push(label);
            index.ids.push(id);
        }
        if index.labels.is_empty() {
            return Err(RetrievalError::EmptyTrainSet);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, position: usize) -> &[f64] {
        &self.vectors[position * self.dim..(position + 1) * self.dim]
    }

    pub fn label(&self, position: usize) -> usize {
        self.labels[position]
    }

    pub fn id(&self, position: usize) -> &str {
        &self.ids[position]
    }

    /// Canonical byte serialisation (dimension, then per entry id, label, vector bits).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.vectors.len() * 8 + self.len() * 24);
        out.extend((self.dim as u64).to_le_bytes());
        for p in 0..self.len() {
            out.extend((self.ids[p].len() as u64).to_le_bytes());
            out.extend(self.ids[p].as_bytes());
            out.extend((self.labels[p] as u64).to_le_bytes());
            for v in self.vector(p) {
                out.extend(v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    /// The `k` nearest stored vectors to the normalised query, ascending by
    /// squared distance, ties to the lower position.
    pub fn knn_query(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if k > self.len() {
            return Err(RetrievalError::KTooLarge { k, len: self.len() });
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch { expected: self.dim, found: query.len() });
        }
        let q = l2_normalized(query).ok_or_else(|| RetrievalError::ZeroVector("query".into()))?;
        let mut all: Vec<Neighbor> = self
            .vectors
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(position, v)| Neighbor {
                position,
                distance: v.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(),
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| -> Ordering {
            a.distance.total_cmp(&b.distance).then(a.position.cmp(&b.position))
        };
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, order);
            all.truncate(k);
        }
        all.sort_unstable_by(order);
        Ok(all)
    }
}

/// Fraction of neighbours carrying each label.
pub fn neighbor_vote(neighbors: &[Neighbor], index: &FlatIndex, num_classes: usize) -> Vec<f64> {
    let mut q = vec![0.0; num_classes];
    if neighbors.is_empty() {
        return q;
    }
    let share = 1.0 / neighbors.len() as f64;
    for n in neighbors {
        q[index.label(n.position)] += share;
    }
    q
}

/// Evidence behind a fused distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evidence {
    None,
    /// Retrieved training studies; always drawn from the indexed training split.
    Neighbors {
        ids: Vec<String>,
        labels: Vec<usize>,
        distances: Vec<f64>,
    },
    Snippets {
        keywords: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedPrediction {
    pub probs: Vec<f64>,
    pub source: Condition,
    pub evidence: Evidence,
}

impl FusedPrediction {
    pub fn baseline(probs: Vec<f64>) -> Self {
        Self { probs, source: Condition::Baseline, evidence: Evidence::None }
    }
}

pub fn neighbor_evidence(neighbors: &[Neighbor], index: &FlatIndex) -> Evidence {
    Evidence::Neighbors {
        ids: neighbors.iter().map(|n| index.id(n.position).to_string()).collect(),
        labels: neighbors.iter().map(|n| index.label(n.position)).collect(),
        distances: neighbors.iter().map(|n| n.distance).collect(),
    }
}

/// Convex mix `(1 - lambda) * p + lambda * q`.
pub fn fuse_image(p: &[f64], q: &[f64], lambda: f64, evidence: Evidence) -> Result<FusedPrediction, RetrievalError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RetrievalError::BadLambda(lambda));
    }
    if p.len() != q.len() {
        return Err(RetrievalError::LengthMismatch(p.len(), q.len()));
    }
    let probs = p.iter().zip(q).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    Ok(FusedPrediction { probs, source: Condition::ImageRag, evidence })
}
