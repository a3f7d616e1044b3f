use std::io;

use thiserror::Error;

/// Errors raised across the crate.
///
/// The variants line up with the CLI exit-code classes: `Numerical` maps to
/// exit 3, everything else that is not an I/O failure maps to exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Wraps the message with a sample id, keeping the variant.
    pub fn with_sample(self, sample_id: u64) -> Self {
        match self {
            Error::Shape(m) => Error::Shape(format!("sample {sample_id}: {m}")),
            Error::Config(m) => Error::Config(format!("sample {sample_id}: {m}")),
            Error::Data(m) => Error::Data(format!("sample {sample_id}: {m}")),
            Error::Usage(m) => Error::Usage(format!("sample {sample_id}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("sample {sample_id}: {m}")),
            other => other,
        }
    }
}
