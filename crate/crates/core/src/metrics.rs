//! Evaluation KPIs: accuracy, macro-F1, hallucination tallies, reliability
//! bins and Expected Calibration Error.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::llm::ParsedLabel;
use crate::numfmt::{self, ser9, ser9_opt};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no prediction records")]
    EmptyRecords,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("total count is zero")]
    ZeroTotal,
    #[error("bin counts sum to {binned}, expected {total}")]
    CountMismatch { binned: usize, total: usize },
    #[error("record `{0}` has no parsed backend outcome")]
    MissingParsedOutcome(String),
    #[error("{0}")]
    Io(String),
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-sample prediction state for one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub label: usize,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub confidence: f64,
    pub outcome: Option<ParsedLabel>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, label: usize, probs: Vec<f64>, outcome: Option<ParsedLabel>) -> Self {
        let predicted = argmax(&probs);
        let confidence = probs[predicted];
        Self { id: id.into(), label, probs, predicted, confidence, outcome }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.label
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Unweighted mean of per-class F1 over the full vocabulary. A class that
/// never occurs in truth or prediction scores 0 and still counts.
pub fn macro_f1(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    let first = records.first().ok_or(MetricsError::EmptyRecords)?;
    let c = first.num_classes();
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fnn = vec![0usize; c];
    for r in records {
        if r.is_correct() {
            tp[r.label] += 1;
        } else {
            fp[r.predicted] += 1;
            fnn[r.label] += 1;
        }
    }
    let total: f64 = (0..c)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fnn[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / c as f64)
}

/// Hallucinated backend outputs: total, denominator, and split by true class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HallucinationTally {
    pub count: usize,
    pub denominator: usize,
    pub by_class: Vec<usize>,
}

pub fn hallucination_tally(
    records: &[PredictionRecord],
    num_classes: usize,
) -> Result<HallucinationTally, MetricsError> {
    let mut by_class = vec![0usize; num_classes];
    for r in records {
        match &r.outcome {
            None => return Err(MetricsError::MissingParsedOutcome(r.id.clone())),
            Some(ParsedLabel::Hallucination(_)) => by_class[r.label] += 1,
            Some(ParsedLabel::Valid(_)) => {}
        }
    }
    Ok(HallucinationTally { count: by_class.iter().sum(), denominator: records.len(), by_class })
}

/// One equal-width confidence bin `(lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Zero-based bin of a confidence under `(lo, hi]` intervals, with 0 folded
/// into the first bin.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut k = ((confidence * b).ceil() as i64).clamp(1, bins as i64) as usize;
    // correct for rounding in confidence * b at the edges
    while k > 1 && confidence <= (k - 1) as f64 / b {
        k -= 1;
    }
    while k < bins && confidence > k as f64 / b {
        k += 1;
    }
    k - 1
}

/// Bin `(confidence, correct)` pairs.
pub fn bin_pairs<I>(pairs: I, bins: usize) -> Result<Vec<ReliabilityBin>, MetricsError>
where
    I: IntoIterator<Item = (f64, bool)>,
{
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (c, ok) in pairs {
        let k = bin_index(c, bins);
        count[k] += 1;
        conf[k] += c;
        hits[k] += usize::from(ok);
    }
    if count.iter().all(|&n| n == 0) {
        return Err(MetricsError::EmptyRecords);
    }
    Ok((0..bins)
        .map(|k| {
            let n = count[k];
            ReliabilityBin {
                lower: k as f64 / bins as f64,
                upper: (k + 1) as f64 / bins as f64,
                count: n,
                mean_confidence: if n == 0 { 0.0 } else { conf[k] / n as f64 },
                accuracy: if n == 0 { 0.0 } else { hits[k] as f64 / n as f64 },
            }
        })
        .collect())
}

pub fn reliability_bins(records: &[PredictionRecord], bins: usize) -> Result<Vec<ReliabilityBin>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    bin_pairs(records.iter().map(|r| (r.confidence, r.is_correct())), bins)
}

/// `sum_b (n_b / N) * |acc_b - conf_b|`.
pub fn ece(bins: &[ReliabilityBin], total: usize) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    let binned: usize = bins.iter().map(|b| b.count).sum();
    if binned != total {
        return Err(MetricsError::CountMismatch { binned, total });
    }
    Ok(bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / total as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum())
}

/// One row of the per-epoch experiment log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(serialize_with = "ser9")]
    pub accuracy: f64,
    #[serde(serialize_with = "ser9")]
    pub macro_f1: f64,
    #[serde(serialize_with = "ser9")]
    pub ece: f64,
    #[serde(serialize_with = "ser9_opt")]
    pub train_loss: Option<f64>,
    pub eval_size: usize,
    /// Absent when no language-model backend is configured.
    pub hallucinations: Option<HallucinationTally>,
}

impl EpochMetrics {
    pub fn compute(
        epoch: usize,
        records: &[PredictionRecord],
        bins: usize,
        train_loss: Option<f64>,
    ) -> Result<(Self, Vec<ReliabilityBin>), MetricsError> {
        let accuracy = accuracy(records)?;
        let macro_f1 = macro_f1(records)?;
        let rb = reliability_bins(records, bins)?;
        let ece = ece(&rb, records.len())?;
        let hallucinations = if records.iter().all(|r| r.outcome.is_some()) {
            Some(hallucination_tally(records, records[0].num_classes())?)
        } else {
            None
        };
        let m = Self { epoch, accuracy, macro_f1, ece, train_loss, eval_size: records.len(), hallucinations };
        Ok((m, rb))
    }
}

pub const RELIABILITY_HEADER: &str = "bin_lo,bin_hi,count,mean_conf,accuracy";

/// Write reliability bins as CSV (`bin_lo,bin_hi,count,mean_conf,accuracy`).
pub fn write_reliability_csv<W: Write>(bins: &[ReliabilityBin], mut out: W) -> Result<(), MetricsError> {
    let io = |e: std::io::Error| MetricsError::Io(e.to_string());
    writeln!(out, "{RELIABILITY_HEADER}").map_err(io)?;
    for b in bins {
        writeln!(
            out,
            "{},{},{},{},{}",
            numfmt::fmt9(b.lower),
            numfmt::fmt9(b.upper),
            b.count,
            numfmt::fmt9(b.mean_confidence),
            numfmt::fmt9(b.accuracy)
        )
        .map_err(io)?;
    }
    Ok(())
}
