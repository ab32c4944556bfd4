use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: width {w} and height {h} must both be positive and finite")]
    InvalidBox { w: f64, h: f64 },

    #[error("singular covariance: diagonal ({0}, {1}) must be strictly positive")]
    SingularCovariance(f64, f64),

    #[error("invalid NWD constant {0}: must be positive and finite")]
    InvalidConstant(f64),

    #[error(
        "invalid thresholds: negative threshold {neg} must not exceed positive threshold {pos}"
    )]
    InvalidThresholds { pos: f64, neg: f64 },

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(&'static str),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {record}: {message}")]
    Record {
        path: PathBuf,
        record: String,
        message: String,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
