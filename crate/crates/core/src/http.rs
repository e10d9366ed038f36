//! Minimal blocking HTTP seam shared by the knowledge client and the HTTP
//! language-model backend. Tests substitute their own [`Transport`].

use std::time::Duration;

use thiserror::Error;

pub const USER_AGENT: &str = concat!("chestrag/", env!("CARGO_PKG_VERSION"), " (research tool)");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError>;
    fn post_json(&self, url: &str, body: &str, timeout: Duration) -> Result<HttpResponse, TransportError>;
}

/// [`Transport`] backed by `ureq`.
#[derive(Debug, Clone, Default)]
pub struct UreqTransport;

impl UreqTransport {
    fn agent(timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(USER_AGENT)
            .build()
            .into()
    }

    fn finish(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<HttpResponse, TransportError> {
        let mut resp = result.map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(HttpResponse { status, body })
    }
}

fn map_err(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError> {
        Self::finish(Self::agent(timeout).get(url).header("Accept", "application/json").call())
    }

    fn post_json(&self, url: &str, body: &str, timeout: Duration) -> Result<HttpResponse, TransportError> {
        Self::finish(
            Self::agent(timeout)
                .post(url)
                .header("Content-Type", "application/json")
                .header("Accept", "application/json")
                .send(body),
        )
    }
}
