//! HTTP client for the `/embed` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Pooling, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub pooling: Pooling,
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

impl EmbedResponse {
    /// Checks the response against the request it answers.
    pub fn validate(&self, req: &EmbedRequest) -> Result<()> {
        if self.model != req.model {
            return Err(EmbedError::Protocol(format!(
                "asked for model {:?}, got {:?}",
                req.model, self.model
            )));
        }
        if self.embeddings.len() != req.texts.len() {
            return Err(EmbedError::Protocol(format!(
                "sent {} texts, got {} embeddings",
                req.texts.len(),
                self.embeddings.len()
            )));
        }
        if self.dim == 0 {
            return Err(EmbedError::Protocol("dim is zero".into()));
        }
        for e in &self.embeddings {
            if e.len() != self.dim {
                return Err(EmbedError::Protocol(format!(
                    "declared dim {} but an embedding has {} values",
                    self.dim,
                    e.len()
                )));
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::Protocol("non-finite value in embedding".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of one HTTP attempt.
enum Attempt {
    Done(EmbedResponse),
    /// Connection failures, timeouts and 5xx responses.
    Retry(String),
    Fatal(EmbedError),
}

#[derive(Debug)]
pub struct ServiceClient {
    url: String,
    agent: ureq::Agent,
    retries: usize,
    backoff: Duration,
}

impl ServiceClient {
    pub fn new(endpoint: &str, timeout: Duration, retries: usize, backoff: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        ServiceClient {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            agent,
            retries,
            backoff,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Sends one request, retrying transient failures with exponential backoff.
    pub fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1u32 << (attempt - 1).min(16)));
            }
            match self.attempt(req) {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(EmbedError::ServiceUnavailable {
            attempts: self.retries + 1,
            last,
        })
    }

    fn attempt(&self, req: &EmbedRequest) -> Attempt {
        let mut resp = match self.agent.post(&self.url).send_json(req) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal(EmbedError::Protocol(format!("HTTP {status}: {body}")));
        }
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let parsed: EmbedResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(EmbedError::Protocol(format!("bad JSON body: {e}"))),
        };
        match parsed.validate(req) {
            Ok(()) => Attempt::Done(parsed),
            Err(e) => Attempt::Fatal(e),
        }
    }
}
