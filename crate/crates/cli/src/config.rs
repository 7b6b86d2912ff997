//! Experiment configuration: TOML on disk, canonical JSON for hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use textrec_core::data::DEFAULT_THRESHOLD;
use textrec_core::embed::{BackendKind, ProviderConfig};
use textrec_core::features::FeatureConfig;
use textrec_core::models::ModelConfig;
use textrec_core::train::TrainConfig;
use textrec_core::verbalize::{Templates, DEFAULT_TEMPLATE_VERSION};

use crate::error::{CliError, Result};

/// Provider model id that switches the text blocks off.
pub const RAW_MODEL_ID: &str = "raw";
pub const ENV_ENDPOINT: &str = "TEXTREC_EMBED_ENDPOINT";
pub const ENV_CACHE_PATH: &str = "TEXTREC_EMBED_CACHE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `users.dat`, `movies.dat` and `ratings.dat`.
    pub ml1m_dir: PathBuf,
    /// Prepared splits and embedding caches.
    pub work_dir: PathBuf,
    /// Parent of the content-addressed run directories.
    pub runs_dir: PathBuf,
    /// Ratings at or above this value are positives.
    pub threshold: u8,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    pub template_version: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            ml1m_dir: PathBuf::from("data/ml-1m"),
            work_dir: PathBuf::from("work"),
            runs_dir: PathBuf::from("runs"),
            threshold: DEFAULT_THRESHOLD,
            split: [0.8, 0.1, 0.1],
            split_seed: 2024,
            template_version: DEFAULT_TEMPLATE_VERSION.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub provider: ProviderConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            provider: ProviderConfig {
                model_id: RAW_MODEL_ID.into(),
                ..ProviderConfig::default()
            },
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn hex12(bytes: &[u8]) -> String {
    bytes[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// First 12 hex digits of SHA-256 over `text`.
pub fn short_hash(text: &str) -> String {
    hex12(&Sha256::digest(text.as_bytes()))
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.ml1m_dir);
        fix(&mut self.data.work_dir);
        fix(&mut self.data.runs_dir);
        if let Some(p) = &mut self.provider.cache_path {
            fix(p);
        }
    }

    /// Applies the endpoint and cache-path environment overrides; nothing else is read from the environment.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(e) = get(ENV_ENDPOINT).filter(|v| !v.is_empty()) {
            self.provider.endpoint = Some(e);
        }
        if let Some(p) = get(ENV_CACHE_PATH).filter(|v| !v.is_empty()) {
            self.provider.cache_path = Some(PathBuf::from(p));
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn is_raw(&self) -> bool {
        self.provider.model_id == RAW_MODEL_ID
    }

    /// Label recorded in manifests and report rows.
    pub fn variant(&self) -> &str {
        &self.provider.model_id
    }

    pub fn validate(&self) -> Result<()> {
        let [tr, va, te] = self.data.split;
        let ok = [tr, va, te].iter().all(|r| r.is_finite() && *r > 0.0) && ((tr + va + te) - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(CliError::Config(format!(
                "split {:?} must be three positive fractions summing to 1",
                self.data.split
            )));
        }
        if !(1..=5).contains(&self.data.threshold) {
            return Err(CliError::Config(format!("threshold {} outside 1..=5", self.data.threshold)));
        }
        Templates::builtin(&self.data.template_version).map_err(|e| CliError::Config(e.to_string()))?;
        self.features.parsed_fields()?;
        if self.features.embed_dim == 0 || self.features.text_dim == 0 {
            return Err(CliError::Config("embed_dim and text_dim must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.provider.model_id.is_empty() {
            return Err(CliError::Config("provider.model_id is empty".into()));
        }
        if !self.is_raw() && self.provider.backend == BackendKind::Service && self.provider.endpoint.is_none() {
            return Err(CliError::Config(format!(
                "service backend needs provider.endpoint or ${ENV_ENDPOINT}"
            )));
        }
        Ok(())
    }

    /// Embedding cache file for the configured provider.
    pub fn cache_path(&self) -> PathBuf {
        self.provider.cache_path.clone().unwrap_or_else(|| {
            self.data
                .work_dir
                .join("cache")
                .join(format!("{}-{}.emb", self.provider.model_id, self.provider.pooling.as_str()))
        })
    }

    /// Inputs that decide the prepared dataset; paths are excluded.
    pub fn prepare_key(&self) -> Value {
        serde_json::json!({
            "threshold": self.data.threshold,
            "split": self.data.split,
            "split_seed": self.data.split_seed,
            "fields": self.features.fields,
            "min_freq": self.features.min_freq,
            "zip_min_freq": self.features.zip_min_freq,
        })
    }

    pub fn prepare_hash(&self) -> String {
        short_hash(&self.prepare_key().to_string())
    }

    /// Semantic content of the config with keys sorted; paths, endpoint and
    /// transport settings are dropped so they never rename a run.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let data = v["data"].as_object_mut().expect("data table");
        for key in ["ml1m_dir", "work_dir", "runs_dir"] {
            data.remove(key);
        }
        if self.is_raw() {
            v["provider"] = serde_json::json!({ "model_id": RAW_MODEL_ID });
        } else {
            let provider = v["provider"].as_object_mut().expect("provider table");
            for key in ["endpoint", "cache_path", "timeout_secs", "retries", "backoff_ms", "batch_size"] {
                provider.remove(key);
            }
        }
        v.to_string()
    }

    /// Run directory name: config semantics plus the prepared-data fingerprint.
    pub fn run_hash(&self, data_fingerprint: &str) -> String {
        short_hash(&format!("{}\n{data_fingerprint}", self.canonical_json()))
    }
}
