use std::collections::{HashMap, HashSet};
use std::sync::Mutex;
use std::time::Duration;

use super::cache::{content_key, Key};
use super::service::{EmbedRequest, ServiceClient};
use super::stub::stub_vector;
use super::{BackendKind, EmbedError, EmbeddingCache, EmbeddingVector, ProviderConfig, Result};

enum Backend {
    Service(ServiceClient),
    Stub(usize),
    File,
}

/// Hit and miss counts for one `embed_texts` call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmbedStats {
    pub requested: usize,
    pub distinct: usize,
    pub hits: usize,
    pub misses: usize,
    pub backend_calls: usize,
}

/// Looks texts up in the cache and sends only the misses to the backend.
pub struct EmbeddingProvider {
    config: ProviderConfig,
    backend: Backend,
    cache: Mutex<EmbeddingCache>,
}

impl EmbeddingProvider {
    pub fn from_config(config: ProviderConfig) -> Result<Self> {
        if config.model_id.is_empty() {
            return Err(EmbedError::Config("model_id is empty".into()));
        }
        if config.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        let backend = match config.backend {
            BackendKind::Service => {
                let endpoint = config.endpoint.as_deref().ok_or_else(|| {
                    EmbedError::Config("service backend needs an endpoint".into())
                })?;
                if !(config.timeout_secs > 0.0) {
                    return Err(EmbedError::Config("timeout_secs must be positive".into()));
                }
                Backend::Service(ServiceClient::new(
                    endpoint,
                    Duration::from_secs_f64(config.timeout_secs),
                    config.retries,
                    Duration::from_millis(config.backoff_ms),
                ))
            }
            BackendKind::Stub => {
                if config.stub_dim == 0 {
                    return Err(EmbedError::Config("stub_dim must be positive".into()));
                }
                Backend::Stub(config.stub_dim)
            }
            BackendKind::File => {
                if config.cache_path.is_none() {
                    return Err(EmbedError::Config("file backend needs a cache_path".into()));
                }
                Backend::File
            }
        };
        let cache = match &config.cache_path {
            Some(p) => EmbeddingCache::open(p, &config.model_id)?,
            None => EmbeddingCache::in_memory(config.model_id.clone()),
        };
        if let (Some(want), Some(have)) = (config.expected_dim, cache.dim()) {
            if want != have {
                return Err(EmbedError::DimMismatch {
                    expected: want,
                    got: have,
                });
            }
        }
        Ok(EmbeddingProvider {
            config,
            backend,
            cache: Mutex::new(cache),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    /// Width of the vectors, once known from the cache or a backend response.
    pub fn dim(&self) -> Option<usize> {
        self.cache.lock().unwrap().dim().or(self.config.expected_dim)
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// One vector per input text, in input order.
    pub fn embed_texts(&self, texts: &[String]) -> Result<(Vec<EmbeddingVector>, EmbedStats)> {
        let mut stats = EmbedStats {
            requested: texts.len(),
            ..EmbedStats::default()
        };
        let keys: Vec<Key> = texts.iter().map(|t| content_key(t)).collect();
        let mut found: HashMap<Key, Vec<f32>> = HashMap::new();
        let mut missing: Vec<&str> = Vec::new();
        let mut seen: HashSet<Key> = HashSet::new();
        {
            let cache = self.cache.lock().unwrap();
            for (t, k) in texts.iter().zip(&keys) {
                if !seen.insert(*k) {
                    continue;
                }
                match cache.get_key(k) {
                    Some(v) => {
                        found.insert(*k, v.values);
                    }
                    None => missing.push(t),
                }
            }
            stats.hits = found.len();
        }
        stats.misses = missing.len();
        stats.distinct = stats.hits + stats.misses;

        for chunk in missing.chunks(self.config.batch_size) {
            let vecs = self.fetch(chunk)?;
            stats.backend_calls += 1;
            let embs: Vec<EmbeddingVector> = vecs
                .into_iter()
                .map(|v| EmbeddingVector::new(self.config.model_id.clone(), v))
                .collect::<Result<_>>()?;
            let mut cache = self.cache.lock().unwrap();
            let expected = cache.dim().or(self.config.expected_dim);
            for e in &embs {
                if let Some(d) = expected {
                    if e.dim() != d {
                        return Err(EmbedError::DimMismatch {
                            expected: d,
                            got: e.dim(),
                        });
                    }
                }
            }
            let batch: Vec<(&str, &EmbeddingVector)> =
                chunk.iter().copied().zip(embs.iter()).collect();
            cache.put_batch(&batch)?;
            for (t, e) in chunk.iter().zip(embs) {
                found.insert(content_key(t), e.values);
            }
        }

        let out = keys
            .iter()
            .map(|k| EmbeddingVector {
                model_id: self.config.model_id.clone(),
                values: found[k].clone(),
            })
            .collect();
        Ok((out, stats))
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        match &self.backend {
            Backend::Stub(dim) => Ok(texts.iter().map(|t| stub_vector(t, *dim)).collect()),
            Backend::File => Err(EmbedError::MissingEmbedding {
                count: texts.len(),
                first: texts[0].to_string(),
            }),
            Backend::Service(client) => {
                let req = EmbedRequest {
                    model: self.config.model_id.clone(),
                    pooling: self.config.pooling,
                    texts: texts.iter().map(|t| t.to_string()).collect(),
                };
                Ok(client.embed(&req)?.embeddings)
            }
        }
    }
}
