//! C ABI over the `chestrag` core.
//!
//! Every entry point returns a [`ChestragStatus`]; on failure the message is
//! available from [`chestrag_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned to
//! the caller are released with [`chestrag_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use chestrag::corpus::LabelVocabulary;
use chestrag::llm::{parse_label, ParsedLabel};
use chestrag::metrics::{bin_pairs, ece};
use chestrag::retrieval::FlatIndex;
use chestrag::runner::{emit_outputs, prepare_output_dir, summarize, ExperimentConfig, Prepared, RunArtifacts};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChestragStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    Panic = 5,
}

/// Exact nearest-neighbour index.
pub struct ChestragIndex {
    inner: FlatIndex,
}

/// A validated experiment config plus the results of its last run.
pub struct ChestragExperiment {
    config: ExperimentConfig,
    results: Option<Vec<RunArtifacts>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: ChestragStatus, msg: impl Into<String>) -> ChestragStatus {
    set_error(msg);
    status
}

fn from_core(e: chestrag::Error) -> ChestragStatus {
    let status = if e.is_config() { ChestragStatus::Config } else { ChestragStatus::Runtime };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> ChestragStatus) -> ChestragStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == ChestragStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(ChestragStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, ChestragStatus> {
    if p.is_null() {
        return Err(fail(ChestragStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(ChestragStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn str_list(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<String>, ChestragStatus> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(ChestragStatus::NullPointer, format!("{name} is null")));
    }
    std::slice::from_raw_parts(p, n).iter().map(|&s| str_arg(s, name).map(str::to_string)).collect()
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn chestrag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn chestrag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn chestrag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build an index from `n` row-major vectors of length `dim` and their labels.
/// Vectors are normalised; ids are the row positions.
///
/// # Safety
/// `vectors` must hold `n * dim` doubles and `labels` `n` values.
#[no_mangle]
pub unsafe extern "C" fn chestrag_index_new(
    vectors: *const f64,
    labels: *const u32,
    n: usize,
    dim: usize,
    out: *mut *mut ChestragIndex,
) -> ChestragStatus {
    guard(|| {
        if vectors.is_null() || labels.is_null() || out.is_null() {
            return fail(ChestragStatus::NullPointer, "vectors, labels and out must be non-null");
        }
        if n == 0 || dim == 0 {
            return fail(ChestragStatus::InvalidArgument, "n and dim must be positive");
        }
        let Some(total) = n.checked_mul(dim) else {
            return fail(ChestragStatus::InvalidArgument, "n * dim overflows");
        };
        let data = std::slice::from_raw_parts(vectors, total);
        let labels = std::slice::from_raw_parts(labels, n);
        let entries =
            data.chunks_exact(dim).zip(labels).enumerate().map(|(i, (v, &l))| (i.to_string(), l as usize, v.to_vec()));
        match FlatIndex::from_entries(dim, entries) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ChestragIndex { inner }));
                ChestragStatus::Ok
            }
            Err(e) => fail(ChestragStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `index` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn chestrag_index_len(index: *const ChestragIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// The `k` nearest stored rows to `query`, closest first; ties go to the lower row.
///
/// # Safety
/// `query` must hold `dim` doubles; `positions` and `distances` must each hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn chestrag_index_query(
    index: *const ChestragIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    positions: *mut usize,
    distances: *mut f64,
) -> ChestragStatus {
    guard(|| {
        let Some(index) = index.as_ref() else {
            return fail(ChestragStatus::NullPointer, "index is null");
        };
        if query.is_null() || positions.is_null() || distances.is_null() {
            return fail(ChestragStatus::NullPointer, "query, positions and distances must be non-null");
        }
        let q = std::slice::from_raw_parts(query, dim);
        match index.inner.knn_query(q, k) {
            Ok(found) => {
                let pos = std::slice::from_raw_parts_mut(positions, k);
                let dist = std::slice::from_raw_parts_mut(distances, k);
                for (slot, n) in found.iter().enumerate() {
                    pos[slot] = n.position;
                    dist[slot] = n.distance;
                }
                ChestragStatus::Ok
            }
            Err(e) => fail(ChestragStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `index` must come from [`chestrag_index_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn chestrag_index_free(index: *mut ChestragIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Expected calibration error of `n` (confidence, correct) pairs over `bins` bins.
///
/// # Safety
/// `confidences` and `correct` must each hold `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chestrag_ece(
    confidences: *const f64,
    correct: *const u8,
    n: usize,
    bins: usize,
    out: *mut f64,
) -> ChestragStatus {
    guard(|| {
        if confidences.is_null() || correct.is_null() || out.is_null() {
            return fail(ChestragStatus::NullPointer, "confidences, correct and out must be non-null");
        }
        let conf = std::slice::from_raw_parts(confidences, n);
        if conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail(ChestragStatus::InvalidArgument, "confidences must lie in [0, 1]");
        }
        let hit = std::slice::from_raw_parts(correct, n);
        let result = bin_pairs(conf.iter().copied().zip(hit.iter().map(|&h| h != 0)), bins).and_then(|b| ece(&b, n));
        match result {
            Ok(v) => {
                *out = v;
                ChestragStatus::Ok
            }
            Err(e) => fail(ChestragStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Resolve free text to a class position in `classes`, or -1 for a hallucination.
///
/// # Safety
/// `classes` must hold `n_classes` strings and `excluded` `n_excluded` strings
/// (may be null when zero); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chestrag_parse_label(
    text: *const c_char,
    classes: *const *const c_char,
    n_classes: usize,
    excluded: *const *const c_char,
    n_excluded: usize,
    out: *mut c_int,
) -> ChestragStatus {
    guard(|| {
        if out.is_null() {
            return fail(ChestragStatus::NullPointer, "out is null");
        }
        let parsed = (|| {
            let text = str_arg(text, "text")?;
            let classes = str_list(classes, n_classes, "classes")?;
            let excluded = str_list(excluded, n_excluded, "excluded")?;
            let vocab = LabelVocabulary::new(classes, excluded)
                .map_err(|e| fail(ChestragStatus::InvalidArgument, e.to_string()))?;
            Ok(parse_label(text, &vocab))
        })();
        match parsed {
            Ok(ParsedLabel::Valid(c)) => {
                *out = c as c_int;
                ChestragStatus::Ok
            }
            Ok(ParsedLabel::Hallucination(_)) => {
                *out = -1;
                ChestragStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Parse and validate an experiment config given as JSON. Relative paths in
/// it resolve against the current directory.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chestrag_experiment_from_json(
    json: *const c_char,
    out: *mut *mut ChestragExperiment,
) -> ChestragStatus {
    guard(|| {
        if out.is_null() {
            return fail(ChestragStatus::NullPointer, "out is null");
        }
        let text = match str_arg(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config = match ExperimentConfig::from_json(text).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => c,
            Err(e) => return from_core(e.into()),
        };
        *out = Box::into_raw(Box::new(ChestragExperiment { config, results: None }));
        ChestragStatus::Ok
    })
}

/// Run every condition and write the result tree to `out_dir`.
/// A non-empty `out_dir` is refused unless `force` is non-zero.
///
/// # Safety
/// `experiment` must be a live handle and `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn chestrag_experiment_run(
    experiment: *mut ChestragExperiment,
    out_dir: *const c_char,
    force: c_int,
    jobs: usize,
) -> ChestragStatus {
    guard(|| {
        let Some(exp) = experiment.as_mut() else {
            return fail(ChestragStatus::NullPointer, "experiment is null");
        };
        let dir = match str_arg(out_dir, "out_dir") {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        let result = (|| -> chestrag::Result<Vec<RunArtifacts>> {
            prepare_output_dir(&dir, force != 0)?;
            let artifacts = Prepared::new(exp.config.clone())?.run_suite(jobs.max(1))?;
            emit_outputs(&artifacts, &dir, &exp.config)?;
            Ok(artifacts)
        })();
        match result {
            Ok(a) => {
                exp.results = Some(a);
                ChestragStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Per-condition summary of the last run as a JSON array. Free the string
/// with [`chestrag_string_free`].
///
/// # Safety
/// `experiment` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chestrag_experiment_summary_json(
    experiment: *const ChestragExperiment,
    out: *mut *mut c_char,
) -> ChestragStatus {
    guard(|| {
        let Some(exp) = experiment.as_ref() else {
            return fail(ChestragStatus::NullPointer, "experiment is null");
        };
        if out.is_null() {
            return fail(ChestragStatus::NullPointer, "out is null");
        }
        let Some(results) = &exp.results else {
            return fail(ChestragStatus::InvalidArgument, "experiment has not been run");
        };
        let pair = |(m, s): (f64, f64)| serde_json::json!({ "mean": m, "std": s });
        let rows: Vec<serde_json::Value> = summarize(results)
            .into_iter()
            .map(|s| {
                serde_json::json!({
                    "condition": s.condition.as_str(),
                    "runs": s.runs,
                    "final_accuracy": pair(s.final_accuracy),
                    "total_hallucinations": s.total_hallucinations.map(pair),
                    "final_ece": pair(s.final_ece),
                    "config_digest": exp.config.digest(),
                })
            })
            .collect();
        *out = into_c_string(serde_json::Value::from(rows).to_string());
        ChestragStatus::Ok
    })
}

/// # Safety
/// `experiment` must come from [`chestrag_experiment_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn chestrag_experiment_free(experiment: *mut ChestragExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}
