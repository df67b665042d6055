use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown platform `{0}`")]
    UnknownPlatform(String),

    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    #[error("invalid platform spec: {0}")]
    InvalidPlatform(String),

    #[error("invalid size distribution: {0}")]
    InvalidDistribution(String),

    #[error("trace parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("no post-warmup queries to summarize")]
    EmptyResult,

    #[error("no configuration meets the {sla_s}s p95 target")]
    InfeasibleSla { sla_s: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
