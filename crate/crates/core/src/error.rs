use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The sample step is too coarse to resolve the relaxation.
    #[error("resolution error: rate*dt = {rate_dt:.4} must be below {limit}")]
    Resolution { rate_dt: f64, limit: f64 },

    #[error("resource error: {what} needs {required_bytes} bytes, limit is {limit_bytes} bytes")]
    Resource {
        what: String,
        required_bytes: u64,
        limit_bytes: u64,
    },

    #[error("fit error: {message} (residual rms {residual_rms:.3e})")]
    Fit { message: String, residual_rms: f64 },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error in {path}: field `{field}`: {detail}")]
    Format {
        path: PathBuf,
        field: String,
        detail: String,
    },

    /// Invalid invocation, such as an empty input set.
    #[error("usage: {0}")]
    Usage(String),

    #[error("missing input: {0}")]
    Dependency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Domain(_)
            | Error::Resolution { .. }
            | Error::Resource { .. }
            | Error::Inconsistent(_)
            | Error::Config(_) => 3,
            Error::Fit { .. } => 4,
            Error::Format { .. } | Error::Io { .. } => 5,
            Error::Dependency(_) => 6,
        }
    }
}
