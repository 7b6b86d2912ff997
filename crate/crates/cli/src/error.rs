//! Command errors and their process exit codes.

use std::path::PathBuf;

use textrec_core::data::DataError;
use textrec_core::embed::EmbedError;
use textrec_core::features::FeatureError;
use textrec_core::metrics::MetricError;
use textrec_core::models::ModelError;
use textrec_core::train::TrainError;
use textrec_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{0}")]
    Dataset(DataError),

    #[error("dataset not prepared (no {}); run `textrec prepare` first", .0.display())]
    NotPrepared(PathBuf),

    #[error("no run manifests found under {0}")]
    NoManifests(String),

    #[error("provider error: {0}")]
    Provider(EmbedError),

    #[error("{0}")]
    Diverged(String),

    #[error("{} is locked by another textrec process", .0.display())]
    Busy(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_)
            | CliError::Dataset(_)
            | CliError::NotPrepared(_)
            | CliError::NoManifests(_)
            | CliError::Io { .. } => 3,
            CliError::Provider(_) => 4,
            CliError::Diverged(_) => 5,
            CliError::Busy(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BadRatios(_) => CliError::Config(e.to_string()),
            other => CliError::Dataset(other),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(msg) => CliError::Config(msg),
            other => CliError::Provider(other),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::UnknownField(_) | FeatureError::FieldOrderMismatch { .. } | FeatureError::Config(_) => {
                CliError::Config(e.to_string())
            }
            FeatureError::Tensor(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Domain { op, reason } => CliError::Diverged(format!("non-finite values in {op}: {reason}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(msg) => CliError::Config(msg),
            ModelError::Feature(f) => f.into(),
            ModelError::Tensor(t) => t.into(),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            TrainError::Config(msg) => CliError::Config(msg),
            TrainError::Metric(m) => m.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Feature(f) => f.into(),
        }
    }
}
