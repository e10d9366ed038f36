//! Deterministic, desk-scale chest X-ray classification experiments comparing a
//! plain classifier against image-retrieval and text-retrieval augmented
//! prediction.
//!
//! The pipeline is split by concern:
//!
//! - [`corpus`]: label/embedding ingestion, single-label filtering, class
//!   exclusion, stratified splitting and synthetic data.
//! - [`sampler`]: inverse-frequency weighted sampling and loss class weights.
//! - [`trainer`]: softmax head over pooled 8-token embeddings, weighted
//!   cross-entropy and Adam.
//! - [`retrieval`]: exact flat KNN index, neighbour voting and keyword
//!   snippet priors.
//! - [`knowledge`]: encyclopedia summary client with an offline snapshot.
//! - [`llm`]: prompt construction, stub/HTTP backends and label parsing.
//! - [`metrics`]: accuracy, macro-F1, hallucination tallies, ECE and
//!   reliability bins.
//! - [`runner`]: experiment configuration, seeded runs and result files.

pub mod condition;
pub mod corpus;
pub mod error;
pub mod http;
pub mod knowledge;
pub mod llm;
pub mod metrics;
pub mod numfmt;
pub mod retrieval;
pub mod runner;
pub mod sampler;
pub mod seed;
pub mod text;
pub mod trainer;

pub use condition::Condition;
pub use error::{Error, Result};
