use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// Each variant maps onto a stable, machine-parsable code via [`Error::code`],
/// which the CLI prints before the human-readable message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate loss: {0}")]
    DegenerateLoss(String),

    #[error("optimization diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}: missing file")]
    MissingFile { path: PathBuf },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: payload length {actual} bytes, expected {expected}")]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: non-finite value in payload")]
    NonFinite { path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "E_DOMAIN",
            Error::Config(_) => "E_CONFIG",
            Error::DegenerateLoss(_) => "E_DEGENERATE_LOSS",
            Error::Divergence { .. } => "E_DIVERGENCE",
            Error::UndefinedMetric(_) => "E_UNDEFINED_METRIC",
            Error::Dimension(_) => "E_DIMENSION",
            Error::MissingFile { .. } => "E_MISSING_FILE",
            Error::Format { .. } => "E_FORMAT",
            Error::PayloadLength { .. } => "E_PAYLOAD_LENGTH",
            Error::NonFinite { .. } => "E_NON_FINITE",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
