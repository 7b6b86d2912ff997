//! Text embeddings from interchangeable backends behind a content-addressed cache.

mod cache;
mod provider;
mod service;
mod stub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{content_key, CacheReadReport, EmbeddingCache, CACHE_MAGIC};
pub use provider::{EmbedStats, EmbeddingProvider};
pub use service::{EmbedRequest, EmbedResponse, ServiceClient};
pub use stub::{stub_vector, STUB_SALT};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding service unavailable after {attempts} attempts: {last}")]
    ServiceUnavailable { attempts: usize, last: String },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("cache file corrupt: {0}")]
    CacheCorrupt(String),

    #[error("cache holds model {found:?}, expected {expected:?}")]
    ModelMismatch { expected: String, found: String },

    #[error("{count} text(s) have no cached embedding (first: {first:?}); run `textrec embed` first")]
    MissingEmbedding { count: usize, first: String },

    #[error("invalid provider config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Dense sentence vector produced by one model.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub model_id: String,
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(model_id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbedError::Protocol("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Protocol("non-finite embedding value".into()));
        }
        Ok(EmbeddingVector {
            model_id: model_id.into(),
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Cls => "cls",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Service,
    /// Cache only; a miss is an error.
    #[default]
    File,
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub backend: BackendKind,
    pub model_id: String,
    pub pooling: Pooling,
    pub endpoint: Option<String>,
    pub cache_path: Option<std::path::PathBuf>,
    pub timeout_secs: f64,
    pub retries: usize,
    pub backoff_ms: u64,
    pub batch_size: usize,
    /// Output width of the stub backend.
    pub stub_dim: usize,
    /// When set, every vector must have this width.
    pub expected_dim: Option<usize>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            backend: BackendKind::File,
            model_id: "bert-base-uncased".into(),
            pooling: Pooling::Mean,
            endpoint: None,
            cache_path: None,
            timeout_secs: 60.0,
            retries: 3,
            backoff_ms: 200,
            batch_size: 64,
            stub_dim: 32,
            expected_dim: None,
        }
    }
}

/// Published hidden size of the supported encoders.
pub fn default_dim(model_id: &str) -> Option<usize> {
    match model_id {
        "bert-base-uncased" | "distilbert-base-uncased" | "roberta-base" => Some(768),
        "roberta-large" => Some(1024),
        _ => None,
    }
}
