//! Language-model bridge: prompt construction, backends, and the parser that
//! turns free-text replies into a class or a hallucination.
//!
//! A hallucination is a reply that resolves to no admissible class: the
//! earliest class-name mention is an excluded class, or no class is named.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::LabelVocabulary;
use crate::http::{Transport, TransportError, UreqTransport};
use crate::seed::to_hex;
use crate::text::find_word;
use crate::Condition;

/// What the stub emits when it decides to hallucinate.
pub const STUB_HALLUCINATION_TOKEN: &str = "UNKNOWN_FINDING";

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("{mode} prompt cannot carry {found} context")]
    EvidenceModeMismatch { mode: Condition, found: &'static str },
    #[error("HTTP status {0}")]
    HttpError(u16),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("reply has no string `text` field")]
    MalformedReply,
    #[error("invalid backend config: {0}")]
    BadConfig(String),
}

impl From<TransportError> for LlmError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => LlmError::Timeout,
            TransportError::Io(m) => LlmError::Transport(m),
        }
    }
}

/// Outcome of parsing one reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParsedLabel {
    Valid(usize),
    Hallucination(String),
}

impl ParsedLabel {
    pub fn is_hallucination(&self) -> bool {
        matches!(self, ParsedLabel::Hallucination(_))
    }
}

/// Retrieved evidence serialised into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptContext {
    None,
    /// Neighbour class names, nearest first.
    Neighbors(Vec<String>),
    /// Snippet texts, best match first. May be empty when nothing matched.
    Snippets(Vec<String>),
}

impl PromptContext {
    fn kind(&self) -> &'static str {
        match self {
            PromptContext::None => "no",
            PromptContext::Neighbors(_) => "neighbour",
            PromptContext::Snippets(_) => "snippet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRequest {
    pub sample_id: String,
    /// SHA-256 of the pooled embedding's little-endian f64 bytes.
    pub embedding_digest: String,
    pub mode: Condition,
    pub context: PromptContext,
    pub instruction: String,
    /// Class the local head ranks first; the stub backend echoes it.
    pub head_label: String,
}

pub fn embedding_digest(pooled: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in pooled {
        h.update(v.to_le_bytes());
    }
    to_hex(&h.finalize())
}

pub fn instruction_text(vocabulary: &LabelVocabulary) -> String {
    format!(
        "Classify this chest X-ray study into exactly one of the following findings: {}. Reply with the finding name only.",
        vocabulary.classes().join(", ")
    )
}

impl PromptRequest {
    /// The full prompt sent to a model.
    pub fn prompt_text(&self) -> String {
        let mut out =
            format!("{}\nStudy: {}\nEmbedding digest: {}\n", self.instruction, self.sample_id, self.embedding_digest);
        match &self.context {
            PromptContext::None => {}
            PromptContext::Neighbors(labels) => {
                out.push_str("Similar training studies, nearest first:\n");
                for (i, l) in labels.iter().enumerate() {
                    out.push_str(&format!("{}. {l}\n", i + 1));
                }
            }
            PromptContext::Snippets(texts) => {
                out.push_str("Reference summaries:\n");
                if texts.is_empty() {
                    out.push_str("(none matched)\n");
                }
                for (i, t) in texts.iter().enumerate() {
                    out.push_str(&format!("[{}] {t}\n", i + 1));
                }
            }
        }
        out
    }
}

/// Build the prompt for one sample. Baseline prompts carry no context,
/// image-rag prompts at least one neighbour, text-rag prompts snippets.
pub fn build_prompt(
    sample_id: &str,
    pooled: &[f64],
    mode: Condition,
    context: PromptContext,
    vocabulary: &LabelVocabulary,
    head_label: &str,
) -> Result<PromptRequest, LlmError> {
    let ok = match (&mode, &context) {
        (Condition::Baseline, PromptContext::None) => true,
        (Condition::ImageRag, PromptContext::Neighbors(n)) => !n.is_empty(),
        (Condition::TextRag, PromptContext::Snippets(_)) => true,
        _ => false,
    };
    if !ok {
        return Err(LlmError::EvidenceModeMismatch { mode, found: context.kind() });
    }
    Ok(PromptRequest {
        sample_id: sample_id.to_string(),
        embedding_digest: embedding_digest(pooled),
        mode,
        context,
        instruction: instruction_text(vocabulary),
        head_label: head_label.to_string(),
    })
}

/// Earliest whole-word, case-insensitive class mention decides the outcome.
pub fn parse_label(text: &str, vocabulary: &LabelVocabulary) -> ParsedLabel {
    let lower = text.to_lowercase();
    // (position, -length, class or None for excluded)
    let mut best: Option<(usize, isize, Option<usize>)> = None;
    let mut consider = |name: &str, class: Option<usize>| {
        let needle = name.to_lowercase();
        if let Some(pos) = find_word(&lower, &needle) {
            let key = (pos, -(needle.len() as isize), class);
            if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
        }
    };
    for (i, c) in vocabulary.classes().iter().enumerate() {
        consider(c, Some(i));
    }
    for c in vocabulary.excluded() {
        consider(c, None);
    }
    match best {
        Some((_, _, Some(class))) => ParsedLabel::Valid(class),
        _ => ParsedLabel::Hallucination(text.to_string()),
    }
}

pub trait LlmBackend: Send + Sync {
    fn request(&self, req: &PromptRequest) -> Result<String, LlmError>;
}

/// Deterministic stand-in for a hosted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubBackend {
    pub seed: u64,
    pub hallucination_rate: f64,
}

impl StubBackend {
    /// Uniform draw in `[0, 1)` from `SHA-256("chestrag/stub" || seed_le || id)`:
    /// the first 8 digest bytes as a little-endian u64, top 53 bits scaled by 2^-53.
    pub fn draw(seed: u64, sample_id: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(b"chestrag/stub");
        h.update(seed.to_le_bytes());
        h.update(sample_id.as_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"));
        (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn hallucinates(&self, sample_id: &str) -> bool {
        Self::draw(self.seed, sample_id) < self.hallucination_rate
    }
}

impl LlmBackend for StubBackend {
    fn request(&self, req: &PromptRequest) -> Result<String, LlmError> {
        if self.hallucinates(&req.sample_id) {
            Ok(STUB_HALLUCINATION_TOKEN.to_string())
        } else {
            Ok(req.head_label.clone())
        }
    }
}

/// POSTs `{"prompt": ...}` (plus `"model"` when set) and reads `{"text": ...}`.
pub struct HttpBackend {
    pub endpoint: String,
    pub timeout: Duration,
    /// Passed through verbatim; never interpreted.
    pub model: Option<String>,
    transport: Box<dyn Transport>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self::with_transport(endpoint, timeout, Box::new(UreqTransport))
    }

    pub fn with_transport(endpoint: impl Into<String>, timeout: Duration, transport: Box<dyn Transport>) -> Self {
        Self { endpoint: endpoint.into(), timeout, model: None, transport }
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }
}

impl LlmBackend for HttpBackend {
    fn request(&self, req: &PromptRequest) -> Result<String, LlmError> {
        let mut body = serde_json::json!({ "prompt": req.prompt_text() });
        if let Some(m) = &self.model {
            body["model"] = serde_json::Value::String(m.clone());
        }
        let body = body.to_string();
        let resp = self.transport.post_json(&self.endpoint, &body, self.timeout)?;
        if !(200..300).contains(&resp.status) {
            return Err(LlmError::HttpError(resp.status));
        }
        let v: serde_json::Value = serde_json::from_str(&resp.body).map_err(|_| LlmError::MalformedReply)?;
        v.get("text").and_then(|t| t.as_str()).map(str::to_string).ok_or(LlmError::MalformedReply)
    }
}

/// Backend selection as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    None,
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        hallucination_rate: f64,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
}

fn default_timeout() -> f64 {
    30.0
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Stub { seed: 0, hallucination_rate: 0.0 }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self {
            BackendConfig::Stub { hallucination_rate, .. } if !(0.0..=1.0).contains(hallucination_rate) => {
                Err(LlmError::BadConfig(format!("hallucination_rate must be in [0, 1], got {hallucination_rate}")))
            }
            BackendConfig::Http { timeout_secs, .. } if !(timeout_secs.is_finite() && *timeout_secs > 0.0) => {
                Err(LlmError::BadConfig(format!("timeout_secs must be > 0, got {timeout_secs}")))
            }
            BackendConfig::Http { endpoint, .. } if endpoint.is_empty() => {
                Err(LlmError::BadConfig("empty endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Option<Box<dyn LlmBackend>>, LlmError> {
        self.validate()?;
        Ok(match self {
            BackendConfig::None => None,
            BackendConfig::Stub { seed, hallucination_rate } => {
                Some(Box::new(StubBackend { seed: *seed, hallucination_rate: *hallucination_rate }))
            }
            BackendConfig::Http { endpoint, timeout_secs, model } => Some(Box::new(
                HttpBackend::new(endpoint.clone(), Duration::from_secs_f64(*timeout_secs)).with_model(model.clone()),
            )),
        })
    }
}
