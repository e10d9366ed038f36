//! Class-imbalance countermeasures: inverse-frequency sample weights for
//! with-replacement batch draws, and per-class loss weights.
//!
//! With sample weight `1 / n_c` every class carries the same total mass, so a
//! single draw lands in each of the `C` classes with probability `1 / C`
//! without duplicating or deleting any sample.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ClassHistogram;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("class {0} has zero samples")]
    ZeroCountClass(usize),
    #[error("custom weight list has {found} entries for {expected} classes")]
    BadCustomLength { expected: usize, found: usize },
    #[error("invalid weight {value} at position {position}")]
    BadWeight { position: usize, value: f64 },
    #[error("no sample weights to draw from")]
    EmptyWeights,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("indices and labels differ in length ({indices} vs {labels})")]
    LengthMismatch { indices: usize, labels: usize },
}

/// Positive per-sample draw weights aligned with a list of dataset indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SampleWeights {
    pub fn new(indices: Vec<usize>, weights: Vec<f64>) -> Result<Self, SamplerError> {
        if indices.len() != weights.len() {
            return Err(SamplerError::LengthMismatch { indices: indices.len(), labels: weights.len() });
        }
        if let Some((position, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(SamplerError::BadWeight { position, value });
        }
        Ok(Self { indices, weights })
    }

    /// Equal weights, i.e. a plain uniform sampler with replacement.
    pub fn uniform(indices: Vec<usize>) -> Self {
        let weights = vec![1.0; indices.len()];
        Self { indices, weights }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, SamplerError> {
        Self::new(self.indices.clone(), self.weights.iter().map(|w| w * factor).collect())
    }

    /// Normalised single-draw probability of each listed sample.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// Probability that one draw lands in each class. `labels` is aligned
    /// with the weights.
    pub fn class_probabilities(&self, labels: &[usize], num_classes: usize) -> Vec<f64> {
        let mut mass = vec![0.0; num_classes];
        for (p, &l) in self.probabilities().iter().zip(labels) {
            mass[l] += p;
        }
        mass
    }
}

/// Sample weight `1 / n_{y_i}` for every listed training sample, with
/// `labels[i]` the class of `indices[i]`.
pub fn sample_weights(
    hist: &ClassHistogram,
    indices: &[usize],
    labels: &[usize],
) -> Result<SampleWeights, SamplerError> {
    if indices.len() != labels.len() {
        return Err(SamplerError::LengthMismatch { indices: indices.len(), labels: labels.len() });
    }
    let weights = labels
        .iter()
        .map(|&l| match hist.counts.get(l) {
            Some(&n) if n > 0 => Ok(1.0 / n as f64),
            _ => Err(SamplerError::ZeroCountClass(l)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    SampleWeights::new(indices.to_vec(), weights)
}

/// Cached cumulative table for repeated draws from the same weights.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    indices: Vec<usize>,
    table: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &SampleWeights) -> Result<Self, SamplerError> {
        if weights.is_empty() {
            return Err(SamplerError::EmptyWeights);
        }
        let table = WeightedIndex::new(weights.weights.iter().copied()).map_err(|_| SamplerError::EmptyWeights)?;
        Ok(Self { indices: weights.indices.clone(), table })
    }

    /// `size` independent draws with replacement, returned as dataset indices.
    pub fn draw<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<usize>, SamplerError> {
        if size == 0 {
            return Err(SamplerError::ZeroBatch);
        }
        Ok((0..size).map(|_| self.indices[self.table.sample(rng)]).collect())
    }
}

pub fn draw_batch<R: Rng + ?Sized>(
    weights: &SampleWeights,
    size: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SamplerError> {
    WeightedSampler::new(weights)?.draw(size, rng)
}

/// Which sampler a run uses for batch construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerScheme {
    #[default]
    Weighted,
    Uniform,
}

/// Per-class multipliers of the cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, SamplerError> {
        if let Some((position, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(SamplerError::BadWeight { position, value });
        }
        Ok(Self { weights })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self { weights: vec![1.0; num_classes] }
    }

    pub fn get(&self, class: usize) -> Option<f64> {
        self.weights.get(class).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeightScheme {
    #[default]
    Uniform,
    /// `w_c = N / (C * n_c)`; uniform counts give exactly 1.
    InverseFrequency,
    Custom(Vec<f64>),
}

pub fn class_loss_weights(hist: &ClassHistogram, scheme: &ClassWeightScheme) -> Result<ClassWeights, SamplerError> {
    let c = hist.num_classes();
    match scheme {
        ClassWeightScheme::Uniform => Ok(ClassWeights::uniform(c)),
        ClassWeightScheme::InverseFrequency => {
            let total = hist.total() as f64;
            let weights = hist
                .counts
                .iter()
                .enumerate()
                .map(
                    |(i, &n)| {
                        if n == 0 {
                            Err(SamplerError::ZeroCountClass(i))
                        } else {
                            Ok(total / (c as f64 * n as f64))
                        }
                    },
                )
                .collect::<Result<Vec<_>, _>>()?;
            ClassWeights::new(weights)
        }
        ClassWeightScheme::Custom(list) => {
            if list.len() != c {
                return Err(SamplerError::BadCustomLength { expected: c, found: list.len() });
            }
            ClassWeights::new(list.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{self, Stream};

    fn hist(counts: &[usize]) -> ClassHistogram {
        ClassHistogram { counts: counts.to_vec() }
    }

    fn members(counts: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        ((0..labels.len()).collect(), labels)
    }

    #[test]
    fn ninety_ten_balances_to_half() {
        let (idx, labels) = members(&[90, 10]);
        let w = sample_weights(&hist(&[90, 10]), &idx, &labels).unwrap();
        assert_eq!(w.weights()[0], 1.0 / 90.0);
        assert_eq!(w.weights()[95], 1.0 / 10.0);
        let p = w.class_probabilities(&labels, 2);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);

        let mut rng = seed::stream(5, Stream::Sampler);
        let draws = draw_batch(&w, 100_000, &mut rng).unwrap();
        let b = draws.iter().filter(|&&i| labels[i] == 1).count() as f64 / 1e5;
        assert!((b - 0.5).abs() < 0.01, "{b}");
    }

    #[test]
    fn balanced_counts_equal_weights() {
        let (idx, labels) = members(&[50, 50]);
        let w = sample_weights(&hist(&[50, 50]), &idx, &labels).unwrap();
        assert!(w.weights().iter().all(|&x| x == w.weights()[0]));
    }

    #[test]
    fn single_class_always_drawn() {
        let (idx, labels) = members(&[0, 7, 0]);
        let w = sample_weights(&hist(&[0, 7, 0]), &idx, &labels).unwrap();
        let mut rng = seed::stream(1, Stream::Sampler);
        let d = draw_batch(&w, 500, &mut rng).unwrap();
        assert!(d.iter().all(|&i| labels[i] == 1));
    }

    #[test]
    fn single_positive_weight_is_always_drawn() {
        let w = SampleWeights::new(vec![42], vec![3.0]).unwrap();
        let mut rng = seed::stream(1, Stream::Sampler);
        assert_eq!(draw_batch(&w, 10, &mut rng).unwrap(), vec![42; 10]);
    }

    #[test]
    fn zero_count_is_an_error() {
        assert_eq!(sample_weights(&hist(&[0, 3]), &[0], &[0]), Err(SamplerError::ZeroCountClass(0)));
        assert_eq!(
            class_loss_weights(&hist(&[4, 0]), &ClassWeightScheme::InverseFrequency),
            Err(SamplerError::ZeroCountClass(1))
        );
    }

    #[test]
    fn draw_errors_and_determinism() {
        let empty = SampleWeights::uniform(vec![]);
        let mut rng = seed::stream(1, Stream::Sampler);
        assert_eq!(draw_batch(&empty, 3, &mut rng), Err(SamplerError::EmptyWeights));
        let w = SampleWeights::uniform((0..10).collect());
        assert_eq!(draw_batch(&w, 0, &mut rng), Err(SamplerError::ZeroBatch));
        let a = draw_batch(&w, 50, &mut seed::stream(9, Stream::Sampler)).unwrap();
        let b = draw_batch(&w, 50, &mut seed::stream(9, Stream::Sampler)).unwrap();
        assert_eq!(a, b);
        assert!(SampleWeights::new(vec![0, 1], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn loss_weight_schemes() {
        let h = hist(&[80, 20]);
        assert_eq!(class_loss_weights(&h, &ClassWeightScheme::Uniform).unwrap().as_slice(), &[1.0, 1.0]);
        let inv = class_loss_weights(&h, &ClassWeightScheme::InverseFrequency).unwrap();
        // 100 / (2 * 80) and 100 / (2 * 20)
        assert_eq!(inv.as_slice(), &[0.625, 2.5]);
        let uni = class_loss_weights(&hist(&[9; 6]), &ClassWeightScheme::InverseFrequency).unwrap();
        assert_eq!(uni.as_slice(), &[1.0; 6]);
        assert_eq!(
            class_loss_weights(&h, &ClassWeightScheme::Custom(vec![1.0])),
            Err(SamplerError::BadCustomLength { expected: 2, found: 1 })
        );
        let custom = vec![0.5, 1.0, 1.0, 1.0, 1.0, 1.0];
        let cw = class_loss_weights(&hist(&[500, 1, 1, 1, 1, 1]), &ClassWeightScheme::Custom(custom.clone())).unwrap();
        assert_eq!(cw.as_slice(), custom.as_slice());
    }

    #[test]
    fn scheme_serde_forms() {
        let s: ClassWeightScheme = serde_json::from_str("\"inverse-frequency\"").unwrap();
        assert_eq!(s, ClassWeightScheme::InverseFrequency);
        let s: ClassWeightScheme = serde_json::from_str("{\"custom\":[0.5,1]}").unwrap();
        assert_eq!(s, ClassWeightScheme::Custom(vec![0.5, 1.0]));
    }
}
