use std::path::PathBuf;

/// Errors raised by graph construction, protocol setup, analysis and the
/// experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph not connected")]
    NotConnected,

    #[error("connectivity retry limit exceeded after {attempts} attempts")]
    ConnectivityRetryLimit { attempts: usize },

    #[error("expected {expected} entries (one per node), got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("level index {index} out of range for {levels} levels")]
    LevelOutOfRange { index: usize, levels: usize },

    #[error("no strict plurality")]
    NoStrictPlurality,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trace output: {0}")]
    Trace(#[source] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
