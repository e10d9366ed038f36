use thiserror::Error;

use crate::corpus::CorpusError;
use crate::knowledge::KnowledgeError;
use crate::llm::LlmError;
use crate::metrics::MetricsError;
use crate::retrieval::RetrievalError;
use crate::runner::RunnerError;
use crate::sampler::SamplerError;
use crate::trainer::TrainerError;

/// Crate-level error; every variant names the module the failure came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("sampler: {0}")]
    Sampler(#[from] SamplerError),
    #[error("trainer: {0}")]
    Trainer(#[from] TrainerError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("knowledge-client: {0}")]
    Knowledge(#[from] KnowledgeError),
    #[error("llm-bridge: {0}")]
    Llm(#[from] LlmError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("runner: {0}")]
    Runner(#[from] RunnerError),
}

impl Error {
    /// Configuration problems (exit code 1) as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Runner(RunnerError::Config(_) | RunnerError::OutputNotEmpty(_)))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
