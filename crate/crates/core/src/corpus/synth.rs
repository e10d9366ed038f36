//! Synthetic token blocks standing in for image-encoder output.
//!
//! Class `c` draws every token row from `N(s * e_c, I)` where `e_c` is the
//! c-th axis unit vector, so `s` controls how separable the classes are.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, LabelVocabulary, SampleRecord, TOKENS_PER_SAMPLE};
use crate::seed::{self, Stream};

/// Config-file form of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Samples per class, aligned with the vocabulary.
    pub counts: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn generate(&self, vocabulary: &LabelVocabulary) -> Result<Dataset, CorpusError> {
        synth_generate(&self.counts, self.dim, self.separation, self.seed, vocabulary)
    }
}

/// Generate `counts[c]` samples of class `c`, class by class, with ids
/// `syn-<class index>-<running index>`.
pub fn synth_generate(
    counts: &[usize],
    dim: usize,
    separation: f64,
    seed: u64,
    vocabulary: &LabelVocabulary,
) -> Result<Dataset, CorpusError> {
    if dim < 2 {
        return Err(CorpusError::BadSpec(format!("dim must be at least 2, got {dim}")));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(CorpusError::BadSpec(format!("separation must be finite and >= 0, got {separation}")));
    }
    if counts.len() != vocabulary.len() {
        return Err(CorpusError::BadSpec(format!(
            "{} class counts for a vocabulary of {}",
            counts.len(),
            vocabulary.len()
        )));
    }
    if counts.len() > dim {
        return Err(CorpusError::BadSpec(format!("{} classes need dim >= {}", counts.len(), counts.len())));
    }
    let mut rng = seed::stream(seed, Stream::Synth);
    let mut samples = Vec::with_capacity(counts.iter().sum());
    let mut running = 0usize;
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let mut tokens = Vec::with_capacity(TOKENS_PER_SAMPLE * dim);
            for _ in 0..TOKENS_PER_SAMPLE {
                for j in 0..dim {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let mean = if j == class { separation } else { 0.0 };
                    tokens.push(mean + noise);
                }
            }
            samples.push(SampleRecord::new(format!("syn-{class}-{running:06}"), class, dim, tokens)?);
            running += 1;
        }
    }
    Dataset::new(vocabulary.clone(), samples, dim)
}
