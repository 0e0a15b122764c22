use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates its contract (window width, kernel width, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data is malformed: non-finite values, wrong shape, unreadable file contents.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numerical routine could not produce a result (singular system, zero spectral radius).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Two model vectors came from different reservoirs.
    #[error("reservoir fingerprint mismatch: {left} vs {right}")]
    FingerprintMismatch { left: String, right: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 2,
            Error::InvalidData(_)
            | Error::FingerprintMismatch { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::Numeric(_) => 4,
        }
    }

    /// Stable machine-parsable prefix printed before the message on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "E_PARAM",
            Error::InvalidData(_) => "E_DATA",
            Error::Numeric(_) => "E_NUMERIC",
            Error::FingerprintMismatch { .. } => "E_FINGERPRINT",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
            Error::Csv(_) => "E_CSV",
        }
    }
}
