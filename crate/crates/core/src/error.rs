use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model architecture: {0}")]
    InvalidArch(String),

    #[error("invalid training config: {0}")]
    InvalidTraining(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("fingerprint of client {index} has zero norm")]
    ZeroNormFingerprint { index: usize },

    #[error("need at least {needed} models, got {actual}")]
    TooFewModels { needed: usize, actual: usize },

    #[error("invalid clustering parameters: {0}")]
    InvalidClustering(String),

    #[error("invalid aggregation request: {0}")]
    InvalidAggregation(String),

    #[error("every model was labelled noise")]
    AllNoise,

    #[error("empty accepted set")]
    EmptyAccepted,

    #[error("trimming {trim} values from each end of {count} leaves nothing to average")]
    OverTrimmed { trim: usize, count: usize },

    #[error("invalid attack parameter: {0}")]
    InvalidAttack(String),

    #[error("label group {label} has too few samples for the partition")]
    LabelGroupExhausted { label: usize },

    #[error("invalid partition request: {0}")]
    InvalidPartition(String),

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: truncated IDX file")]
    Truncated { path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sweep row {axis}={value}: {source}")]
    SweepRow {
        axis: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Config problems map to CLI exit code 1, everything else to 2.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArch(_)
                | Error::InvalidTraining(_)
                | Error::InvalidClustering(_)
                | Error::InvalidAggregation(_)
                | Error::InvalidAttack(_)
                | Error::InvalidPartition(_)
        )
    }
}
