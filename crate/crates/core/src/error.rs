use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite argument {0} passed to a normal-distribution kernel")]
    Domain(f64),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid neighbourhood rule: {0}")]
    InvalidRule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("selection is perfectly predicted: {0}")]
    Separation(String),

    #[error("design matrix is rank deficient: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),

    #[error("probit did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NotConverged { iterations: usize, score_norm: f64 },

    #[error("too few differenced rows: {rows} rows for {params} parameters")]
    TooFewRows { rows: usize, params: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),

    #[error("bootstrap needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for failures caused by malformed input rather than by the estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::Row { .. }
                | Error::InvalidDataset(_)
                | Error::InvalidRule(_)
                | Error::InvalidArgument(_)
                | Error::Config(_)
        )
    }
}
