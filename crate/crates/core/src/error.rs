use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the testbed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed circuit: {0}")]
    MalformedCircuit(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("calibration parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid calibration: {0}")]
    Calibration(String),

    #[error("pair ({0}, {1}) is not an edge of the topology")]
    MissingEdge(u32, u32),

    #[error("qubit {0} is used by more than one pair in the batch")]
    OverlappingPairs(u32),

    #[error("energy estimate needs both settings with equal shots: {0}")]
    SettingMismatch(String),

    #[error("confusion matrix is singular or ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("least-squares system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("surrogate fit is under-determined: {0}")]
    UnderDetermined(String),

    #[error("selection needs {requested} pairs but only {available} are available")]
    SelectionTooLarge { requested: usize, available: usize },

    #[error("output error: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Output(e.to_string())
    }
}
