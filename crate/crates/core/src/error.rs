//! Error type shared by the whole crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Dimensions of two objects that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The call itself is malformed (empty input, exhausted mask, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// The request exceeds what the method can compute (e.g. exact
    /// partition function of a layer that is too large).
    #[error("capability error: {0}")]
    Capability(String),

    /// A numeric invariant was violated (NaN/Inf in parameters).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file did not match its documented layout.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// A configuration file or flag set is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 0 success, 2 config, 3 data,
    /// 4 capability, 5 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Format { .. } | Error::Io { .. } | Error::Domain(_) | Error::Shape(_) => 3,
            Error::Capability(_) => 4,
            Error::Numeric(_) => 5,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
