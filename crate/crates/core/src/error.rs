use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to load {entry}: {reason}")]
    Load { entry: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("binning failed: {0}")]
    Binning(String),

    #[error("selection failed: {0}")]
    Selection(String),

    #[error("encoding failed: {0}")]
    Encoding(String),

    #[error("survival loss undefined: {0}")]
    Loss(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate logrank test: {0}")]
    DegenerateTest(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(entry: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Load {
            entry: entry.into(),
            reason: reason.into(),
        }
    }

    /// Stable process exit code for each error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Load { .. } | Error::Io { .. } => 3,
            Error::Dimension { .. } => 4,
            Error::Binning(_) | Error::Loss(_) => 5,
            Error::Selection(_) | Error::Encoding(_) => 6,
            Error::UndefinedMetric(_) | Error::DegenerateTest(_) => 7,
            Error::Divergence { .. } => 8,
            Error::Checkpoint(_) => 9,
        }
    }
}
