use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown column `{0}` referenced by feature spec")]
    UnknownColumn(String),

    #[error("could not parse `{value}` in column `{column}` (line {line})")]
    Parse {
        column: String,
        value: String,
        line: usize,
    },

    /// A single ingestion-time precondition failure.
    #[error("{message} (cluster {cluster}, individual {individual}, t={t})")]
    Row {
        message: String,
        cluster: String,
        individual: String,
        t: i64,
    },

    #[error("invalid panel: {}", .0.join("; "))]
    InvalidPanel(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("probability out of open interval: {0}")]
    Probability(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in estimating function at cluster {cluster}, individual {individual}, t={t}")]
    NonFinite {
        cluster: String,
        individual: String,
        t: usize,
    },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular matrix in {context} (condition number {condition:e})")]
    Singular { context: String, condition: f64 },

    #[error("zero weighted outcome mass in the {arm} arm; log relative risk is undefined")]
    ZeroOutcomeMass { arm: &'static str },

    #[error("no eligible pairs: every cluster has fewer than two members")]
    NoEligiblePairs,

    #[error("too few units for inference: {units} units with {params} parameters")]
    InsufficientDf { units: usize, params: usize },

    #[error("Bernoulli mean {mean} outside (0,1) in scenario {scenario} (cluster {cluster}, individual {individual}, t={t})")]
    MeanOutOfRange {
        scenario: String,
        cluster: usize,
        individual: usize,
        t: usize,
        mean: f64,
    },

    #[error("every replicate failed in cell {0}")]
    AllReplicatesFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonConvergence { .. }
                | Error::Singular { .. }
                | Error::ZeroOutcomeMass { .. }
                | Error::NoEligiblePairs
                | Error::InsufficientDf { .. }
                | Error::MeanOutOfRange { .. }
                | Error::AllReplicatesFailed(_)
        )
    }
}
