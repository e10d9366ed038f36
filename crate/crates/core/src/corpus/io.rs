//! CSV ingestion and export of label and embedding tables.
//!
//! Label file: header `id,label` (one finding per row) or the raw NIH form
//! `id,labels` where findings may be `|`-joined; raw rows go through
//! [`filter_single_label`] first.
//!
//! Embedding file: header `id,t,f0,...,f{D-1}` with exactly one row per token
//! index `t` in `0..8` for each id.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{filter_single_label, CorpusError, Dataset, LabelVocabulary, SampleRecord, TOKENS_PER_SAMPLE};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(file))
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

/// Label rows resolved against a vocabulary, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRows {
    pub vocabulary: LabelVocabulary,
    pub rows: Vec<(String, usize)>,
}

/// Read a label file. Multi-label rows (raw form only) are dropped, rows whose
/// class is in the vocabulary's excluded set are dropped, and any other
/// unrecognised class name is an error.
pub fn load_labels(path: &Path, vocabulary: &LabelVocabulary) -> Result<LabelRows, CorpusError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let raw = match (headers.get(0), headers.get(1), headers.len()) {
        (Some("id"), Some("label"), 2) => false,
        (Some("id"), Some("labels"), 2) => true,
        _ => {
            return Err(CorpusError::MalformedRow {
                line: 1,
                reason: "expected header `id,label` or `id,labels`".into(),
            })
        }
    };
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(CorpusError::MalformedRow { line, reason: format!("expected 2 fields, found {}", rec.len()) });
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(CorpusError::MalformedRow { line, reason: "empty id".into() });
        }
        pairs.push((id.to_string(), rec[1].trim().to_string()));
    }
    let pairs = if raw {
        filter_single_label(pairs)
    } else {
        for (id, name) in &pairs {
            if name.contains(super::LABEL_SEPARATOR) {
                return Err(CorpusError::MalformedRow {
                    line: 0,
                    reason: format!("`{id}` has a multi-label value in a single-label file"),
                });
            }
        }
        pairs
    };
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, name) in pairs {
        match vocabulary.index_of(&name) {
            Some(label) => rows.push((id, label)),
            None if vocabulary.excluded().contains(&name) => {}
            None => return Err(CorpusError::UnknownLabel(name)),
        }
    }
    Ok(LabelRows { vocabulary: vocabulary.clone(), rows })
}

/// Token blocks keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub blocks: HashMap<String, Vec<f64>>,
}

pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable, CorpusError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "t" {
        return Err(CorpusError::MalformedRow { line: 1, reason: "expected header `id,t,f0,...`".into() });
    }
    let dim = headers.len() - 2;
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{j}") {
            return Err(CorpusError::MalformedRow { line: 1, reason: format!("column {} should be `f{j}`", j + 2) });
        }
    }
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(CorpusError::DimensionMismatch { line: 1, expected, found: dim });
        }
    }

    let mut blocks: HashMap<String, Vec<f64>> = HashMap::new();
    let mut seen: HashMap<String, [bool; TOKENS_PER_SAMPLE]> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != dim + 2 {
            return Err(CorpusError::DimensionMismatch { line, expected: dim, found: rec.len().saturating_sub(2) });
        }
        let id = rec[0].trim().to_string();
        let t: usize = rec[1]
            .trim()
            .parse()
            .ok()
            .filter(|t| *t < TOKENS_PER_SAMPLE)
            .ok_or_else(|| CorpusError::MalformedRow { line, reason: format!("bad token index `{}`", &rec[1]) })?;
        let flags = seen.entry(id.clone()).or_insert([false; TOKENS_PER_SAMPLE]);
        if std::mem::replace(&mut flags[t], true) {
            return Err(CorpusError::MalformedRow { line, reason: format!("duplicate token row {t} for `{id}`") });
        }
        let block = blocks.entry(id).or_insert_with(|| vec![0.0; TOKENS_PER_SAMPLE * dim]);
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CorpusError::MalformedRow { line, reason: format!("bad value `{field}`") })?;
            if !v.is_finite() {
                return Err(CorpusError::MalformedRow { line, reason: format!("non-finite value `{field}`") });
            }
            block[t * dim + j] = v;
        }
    }
    for (id, flags) in &seen {
        let found = flags.iter().filter(|f| **f).count();
        if found != TOKENS_PER_SAMPLE {
            return Err(CorpusError::IncompleteTokens { id: id.clone(), found });
        }
    }
    Ok(EmbeddingTable { dim, blocks })
}

/// Join a label file and an embedding file into a dataset (label-file order).
pub fn load_dataset(
    labels: &Path,
    embeddings: &Path,
    vocabulary: &LabelVocabulary,
    dim: Option<usize>,
) -> Result<Dataset, CorpusError> {
    let rows = load_labels(labels, vocabulary)?;
    let mut table = load_embeddings(embeddings, dim)?;
    let mut samples = Vec::with_capacity(rows.rows.len());
    for (id, label) in rows.rows {
        let tokens = table.blocks.remove(&id).ok_or_else(|| CorpusError::MissingEmbedding(id.clone()))?;
        samples.push(SampleRecord::new(id, label, table.dim, tokens)?);
    }
    Dataset::new(rows.vocabulary, samples, table.dim)
}

pub fn write_labels(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["id", "label"]).map_err(|e| io_err(path, e))?;
    for s in dataset.samples() {
        w.write_record([s.id(), dataset.vocabulary().name(s.label())]).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_embeddings(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let dim = dataset.dim();
    let mut header = String::from("id,t");
    for j in 0..dim {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(out, "{header}").map_err(|e| io_err(path, e))?;
    for s in dataset.samples() {
        for t in 0..TOKENS_PER_SAMPLE {
            let mut line = format!("{},{t}", s.id());
            for v in s.token_row(t) {
                // Display is the shortest representation that parses back exactly.
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}
