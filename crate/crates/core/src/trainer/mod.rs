//! Linear softmax head over mean-pooled token blocks, trained with
//! class-weighted cross-entropy and Adam.

mod adam;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SampleRecord, TOKENS_PER_SAMPLE};
use crate::metrics::PredictionRecord;
use crate::sampler::{ClassWeights, WeightedSampler};

pub use adam::{AdamConfig, AdamState};

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("token block has {found} values, expected {TOKENS_PER_SAMPLE} x {dim}")]
    WrongTokenCount { found: usize, dim: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("label {label} outside {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
}

/// Mean over the 8 token rows of a row-major `8 x dim` block.
pub fn pool_tokens(tokens: &[f64], dim: usize) -> Result<Vec<f64>, TrainerError> {
    if dim == 0 || tokens.len() != TOKENS_PER_SAMPLE * dim {
        return Err(TrainerError::WrongTokenCount { found: tokens.len(), dim });
    }
    let mut out = vec![0.0; dim];
    for row in tokens.chunks_exact(dim) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= TOKENS_PER_SAMPLE as f64;
    }
    Ok(out)
}

pub fn pool_sample(sample: &SampleRecord) -> Vec<f64> {
    pool_tokens(sample.tokens(), sample.dim()).expect("SampleRecord always holds 8 rows")
}

/// `C x D` weights followed by `C` biases in one flat vector, so the
/// optimiser can treat all parameters uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    classes: usize,
    dim: usize,
    params: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, params: vec![0.0; classes * dim + classes] }
    }

    /// Weights and biases drawn from `U(-0.01, 0.01)`.
    pub fn init<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        let params = (0..classes * dim + classes).map(|_| rng.random_range(-0.01..0.01)).collect();
        Self { classes, dim, params }
    }

    pub fn from_parts(classes: usize, dim: usize, weights: &[f64], bias: &[f64]) -> Result<Self, TrainerError> {
        if weights.len() != classes * dim {
            return Err(TrainerError::ShapeMismatch { expected: classes * dim, found: weights.len() });
        }
        if bias.len() != classes {
            return Err(TrainerError::ShapeMismatch { expected: classes, found: bias.len() });
        }
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(TrainerError::NonFiniteInput);
        }
        Ok(Self { classes, dim, params })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.classes * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.classes * self.dim..]
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, TrainerError> {
        if x.len() != self.dim {
            return Err(TrainerError::ShapeMismatch { expected: self.dim, found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TrainerError::NonFiniteInput);
        }
        let (w, b) = self.params.split_at(self.classes * self.dim);
        Ok(w.chunks_exact(self.dim)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
            .collect())
    }

    /// `softmax(Wx + b)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, TrainerError> {
        Ok(softmax(&self.logits(x)?))
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// `-w_y * ln p_y`.
pub fn weighted_ce(probs: &[f64], label: usize, weights: &ClassWeights) -> Result<f64, TrainerError> {
    let p = probs.get(label).ok_or(TrainerError::BadLabel { label, classes: probs.len() })?;
    let w = weights.get(label).ok_or(TrainerError::BadLabel { label, classes: weights.len() })?;
    Ok(-w * p.ln())
}

/// Gradient of the batch-mean weighted cross-entropy, laid out like
/// [`ClassifierHead::params`], together with the batch loss.
pub fn grad(
    head: &ClassifierHead,
    batch: &[(&[f64], usize)],
    weights: &ClassWeights,
) -> Result<(f64, Vec<f64>), TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    let (c, d) = (head.classes, head.dim);
    let mut g = vec![0.0; head.params.len()];
    let mut loss = 0.0;
    for &(x, y) in batch {
        if y >= c {
            return Err(TrainerError::BadLabel { label: y, classes: c });
        }
        let w_y = weights.get(y).ok_or(TrainerError::BadLabel { label: y, classes: weights.len() })?;
        let z = head.logits(x)?;
        let lse = log_sum_exp(&z);
        loss += w_y * (lse - z[y]);
        for k in 0..c {
            let p = (z[k] - lse).exp();
            let dz = w_y * (p - if k == y { 1.0 } else { 0.0 });
            for (gw, xv) in g[k * d..(k + 1) * d].iter_mut().zip(x) {
                *gw += dz * xv;
            }
            g[c * d + k] += dz;
        }
    }
    let n = batch.len() as f64;
    for v in &mut g {
        *v /= n;
    }
    Ok((loss / n, g))
}

/// Batch-mean weighted cross-entropy computed from logits.
pub fn batch_loss(
    head: &ClassifierHead,
    batch: &[(&[f64], usize)],
    weights: &ClassWeights,
) -> Result<f64, TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    let mut total = 0.0;
    for &(x, y) in batch {
        let z = head.logits(x)?;
        let w_y = weights.get(y).ok_or(TrainerError::BadLabel { label: y, classes: weights.len() })?;
        if y >= z.len() {
            return Err(TrainerError::BadLabel { label: y, classes: z.len() });
        }
        total += w_y * (log_sum_exp(&z) - z[y]);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, batches_per_epoch: 20, adam: AdamConfig::default() }
    }
}

/// Pooled features and labels indexed by dataset position.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub pooled: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

/// Outcome of one epoch: evaluation records plus the mean training loss
/// (absent when no batches ran).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub records: Vec<PredictionRecord>,
    pub mean_loss: Option<f64>,
}

/// Run `batches_per_epoch` weighted-sampled Adam updates, then hand the head
/// to `evaluate` for the validation pass.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<R, F>(
    head: &mut ClassifierHead,
    state: &mut AdamState,
    features: Features<'_>,
    sampler: &WeightedSampler,
    weights: &ClassWeights,
    config: &TrainConfig,
    rng: &mut R,
    evaluate: F,
) -> crate::Result<EpochLog>
where
    R: Rng + ?Sized,
    F: FnOnce(&ClassifierHead) -> crate::Result<Vec<PredictionRecord>>,
{
    let mut loss_sum = 0.0;
    for _ in 0..config.batches_per_epoch {
        let draws = sampler.draw(config.batch_size, rng)?;
        let batch: Vec<(&[f64], usize)> =
            draws.iter().map(|&i| (features.pooled[i].as_slice(), features.labels[i])).collect();
        let (loss, g) = grad(head, &batch, weights)?;
        state.step(&mut head.params, &g)?;
        loss_sum += loss;
    }
    let mean_loss = (config.batches_per_epoch > 0).then(|| loss_sum / config.batches_per_epoch as f64);
    let records = evaluate(head)?;
    Ok(EpochLog { records, mean_loss })
}

/// Plain classifier predictions for the listed samples.
pub fn evaluate_head(
    head: &ClassifierHead,
    features: Features<'_>,
    ids: &[&str],
    indices: &[usize],
) -> Result<Vec<PredictionRecord>, TrainerError> {
    indices
        .iter()
        .map(|&i| Ok(PredictionRecord::new(ids[i], features.labels[i], head.forward(&features.pooled[i])?, None)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{self, Stream};

    #[test]
    fn pooling() {
        let r = [1.5, -2.0, 0.25];
        let same: Vec<f64> = r.iter().copied().cycle().take(24).collect();
        assert_eq!(pool_tokens(&same, 3).unwrap(), r.to_vec());

        let mut alt = Vec::new();
        for t in 0..8 {
            let s = if t % 2 == 0 { 1.0 } else { -1.0 };
            alt.extend(r.iter().map(|v| s * v));
        }
        assert_eq!(pool_tokens(&alt, 3).unwrap(), vec![0.0; 3]);
        assert_eq!(pool_tokens(&[0.0; 21], 3), Err(TrainerError::WrongTokenCount { found: 21, dim: 3 }));
    }

    #[test]
    fn pooling_matches_direct_summation() {
        let mut rng = seed::stream(3, Stream::Init);
        let block: Vec<f64> = (0..24).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pooled = pool_tokens(&block, 3).unwrap();
        for j in 0..3 {
            let mut s = 0.0;
            for t in 0..8 {
                s += block[t * 3 + j];
            }
            assert!((pooled[j] - s / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = ClassifierHead::zeros(6, 4);
        let p = head.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn huge_bias_does_not_overflow() {
        let mut bias = vec![0.0; 6];
        bias[0] = 1000.0;
        let head = ClassifierHead::from_parts(6, 2, &[0.0; 12], &bias).unwrap();
        let p = head.forward(&[0.3, 0.4]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(head.forward(&[f64::INFINITY, 0.0]), Err(TrainerError::NonFiniteInput));
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn softmax_matches_high_precision_reference() {
        // reference computed with 50-digit arithmetic
        let w = [0.25, -0.5, 1.0, -1.5, 0.75, 0.125, 2.0, 0.5, -0.25, 0.0, 0.0, 0.0, 0.3, -0.2, 0.9, -0.8, 1.4, -0.6];
        let b = [0.1, -0.3, 0.05, 0.0, 0.2, -0.1];
        let head = ClassifierHead::from_parts(6, 3, &w, &b).unwrap();
        let p = head.forward(&[0.7, -1.1, 2.3]).unwrap();
        let reference = [
            0.566_124_534_182_392_84,
            0.003_767_132_413_690_157_1,
            0.034_426_068_377_303_657,
            0.024_873_776_080_954_238,
            0.370_115_115_069_157_84,
            0.000_693_373_876_501_261_06,
        ];
        for (a, e) in p.iter().zip(reference) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_ce_values() {
        let u = ClassWeights::uniform(6);
        let p = vec![1.0 / 6.0; 6];
        assert!((weighted_ce(&p, 2, &u).unwrap() - 1.791759469228055).abs() < 1e-12);
        let onehot = [0.0, 1.0];
        assert_eq!(weighted_ce(&onehot, 1, &ClassWeights::new(vec![1.0, 7.0]).unwrap()).unwrap(), 0.0);
        let w = ClassWeights::new(vec![1.0, 2.5]).unwrap();
        assert!((weighted_ce(&[0.6, 0.4], 1, &w).unwrap() - 2.2907268296853873).abs() < 1e-12);
        assert!(matches!(weighted_ce(&[0.6, 0.4], 2, &w), Err(TrainerError::BadLabel { .. })));
    }

    #[test]
    fn confident_prediction_has_vanishing_gradient() {
        let mut bias = vec![0.0; 3];
        bias[1] = 60.0;
        let head = ClassifierHead::from_parts(3, 2, &[0.0; 6], &bias).unwrap();
        let x = [0.5, -0.5];
        let (_, g) = grad(&head, &[(&x, 1)], &ClassWeights::uniform(3)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn gradient_is_linear_in_class_weight() {
        let mut rng = seed::stream(11, Stream::Init);
        let head = ClassifierHead::init(3, 4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g1) = grad(&head, &[(&x, 2)], &ClassWeights::new(vec![1.0, 1.0, 1.5]).unwrap()).unwrap();
        let (_, g2) = grad(&head, &[(&x, 2)], &ClassWeights::new(vec![1.0, 1.0, 3.0]).unwrap()).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
        assert_eq!(grad(&head, &[], &ClassWeights::uniform(3)), Err(TrainerError::EmptyBatch));
    }

    #[test]
    fn uniform_weights_equal_plain_cross_entropy() {
        let mut rng = seed::stream(4, Stream::Init);
        let head = ClassifierHead::init(4, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 4)).collect();
        let weighted = batch_loss(&head, &batch, &ClassWeights::uniform(4)).unwrap();
        let plain: f64 = batch
            .iter()
            .map(|(x, y)| {
                let z = head.logits(x).unwrap();
                log_sum_exp(&z) - z[*y]
            })
            .sum::<f64>()
            / 5.0;
        assert_eq!(weighted, plain);
    }
}
