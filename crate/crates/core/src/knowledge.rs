//! Encyclopedia summary client and its offline snapshot.
//!
//! Experiments read summaries from a [`SnapshotStore`]; only an explicit
//! refresh talks to the REST endpoint (`GET {base}/page/summary/{term}`, of
//! which only the `extract` field is used). Snapshot files hold one JSON
//! object per line: `{"keyword":..,"fetched_at":..,"summary":..}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{Transport, TransportError};

/// Snapshot of the six class-term summaries shipped with the crate.
pub const BUNDLED_SNAPSHOT: &str = include_str!("../data/snapshot.jsonl");

pub const DEFAULT_ENDPOINT: &str = "https://en.wikipedia.org/api/rest_v1";

const PATH_SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

#[derive(Debug, Error, PartialEq)]
pub enum KnowledgeError {
    #[error("`{0}` is not in the offline snapshot")]
    CacheMiss(String),
    #[error("HTTP status {0}")]
    HttpError(u16),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("response body has no string `extract` field")]
    MalformedBody,
    #[error("snapshot line {line}: {reason}")]
    MalformedSnapshot { line: usize, reason: String },
    #[error("empty search term")]
    EmptyTerm,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl From<TransportError> for KnowledgeError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => KnowledgeError::Timeout,
            TransportError::Io(m) => KnowledgeError::Transport(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub summary: String,
    /// ISO-8601 UTC fetch time.
    pub fetched_at: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotLine {
    keyword: String,
    fetched_at: String,
    summary: String,
}

/// Lowercase keyword to summary map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapshotStore {
    entries: BTreeMap<String, SnapshotEntry>,
    missing_file: bool,
}

impl SnapshotStore {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SNAPSHOT).expect("bundled snapshot is well formed")
    }

    pub fn insert(&mut self, keyword: &str, entry: SnapshotEntry) {
        self.entries.insert(normalize(keyword), entry);
    }

    pub fn get(&self, keyword: &str) -> Option<&SnapshotEntry> {
        self.entries.get(&normalize(keyword))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SnapshotEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Set when the store came from a path that did not exist.
    pub fn loaded_from_missing_file(&self) -> bool {
        self.missing_file
    }

    pub fn parse(text: &str) -> Result<Self, KnowledgeError> {
        let mut store = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| KnowledgeError::MalformedSnapshot { line, reason };
            let rec: SnapshotLine = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
            let keyword = normalize(&rec.keyword);
            if keyword.is_empty() {
                return Err(bad("empty keyword".into()));
            }
            if rec.summary.is_empty() {
                return Err(bad(format!("empty summary for `{keyword}`")));
            }
            chrono::DateTime::parse_from_rfc3339(&rec.fetched_at)
                .map_err(|e| bad(format!("bad timestamp `{}`: {e}", rec.fetched_at)))?;
            if store.entries.contains_key(&keyword) {
                return Err(bad(format!("duplicate keyword `{keyword}`")));
            }
            store.entries.insert(keyword, SnapshotEntry { summary: rec.summary, fetched_at: rec.fetched_at });
        }
        Ok(store)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (keyword, e) in &self.entries {
            let line =
                SnapshotLine { keyword: keyword.clone(), fetched_at: e.fetched_at.clone(), summary: e.summary.clone() };
            out.push_str(&serde_json::to_string(&line).expect("snapshot lines serialize"));
            out.push('\n');
        }
        out
    }
}

fn normalize(keyword: &str) -> String {
    keyword.trim().to_lowercase()
}

/// Load a snapshot file; a missing file yields an empty store flagged with
/// [`SnapshotStore::loaded_from_missing_file`].
pub fn snapshot_load(path: &Path) -> Result<SnapshotStore, KnowledgeError> {
    match fs::read_to_string(path) {
        Ok(text) => SnapshotStore::parse(&text),
        Err(e) if e.kind() == ErrorKind::NotFound => {
            log::warn!("snapshot {} not found; using an empty store", path.display());
            Ok(SnapshotStore { entries: BTreeMap::new(), missing_file: true })
        }
        Err(e) => Err(KnowledgeError::Io { path: path.display().to_string(), message: e.to_string() }),
    }
}

pub fn snapshot_save(store: &SnapshotStore, path: &Path) -> Result<(), KnowledgeError> {
    fs::write(path, store.render())
        .map_err(|e| KnowledgeError::Io { path: path.display().to_string(), message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FetchMode {
    #[default]
    OfflineOnly,
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchPolicy {
    pub mode: FetchMode,
    pub endpoint: String,
    pub timeout_secs: f64,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self { mode: FetchMode::OfflineOnly, endpoint: DEFAULT_ENDPOINT.into(), timeout_secs: 10.0 }
    }
}

pub fn summary_url(endpoint: &str, term: &str) -> String {
    format!("{}/page/summary/{}", endpoint.trim_end_matches('/'), utf8_percent_encode(term, PATH_SEGMENT))
}

/// Summary text for `term`. Offline mode only consults `store`; refresh mode
/// fetches, stores under the lowercased term, and returns the `extract`.
pub fn fetch_summary(
    term: &str,
    policy: &FetchPolicy,
    store: &mut SnapshotStore,
    transport: &dyn Transport,
) -> Result<String, KnowledgeError> {
    let term = term.trim();
    if term.is_empty() {
        return Err(KnowledgeError::EmptyTerm);
    }
    match policy.mode {
        FetchMode::OfflineOnly => {
            store.get(term).map(|e| e.summary.clone()).ok_or_else(|| KnowledgeError::CacheMiss(term.to_string()))
        }
        FetchMode::Refresh => {
            let timeout = Duration::from_secs_f64(policy.timeout_secs.max(0.001));
            let resp = transport.get(&summary_url(&policy.endpoint, term), timeout)?;
            if resp.status != 200 {
                return Err(KnowledgeError::HttpError(resp.status));
            }
            let body: serde_json::Value =
                serde_json::from_str(&resp.body).map_err(|_| KnowledgeError::MalformedBody)?;
            let extract = body
                .get("extract")
                .and_then(|v| v.as_str())
                .filter(|s| !s.is_empty())
                .ok_or(KnowledgeError::MalformedBody)?
                .to_string();
            let fetched_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
            store.insert(term, SnapshotEntry { summary: extract.clone(), fetched_at });
            Ok(extract)
        }
    }
}
