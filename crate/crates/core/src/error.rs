use std::path::PathBuf;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("axis {axis} does not exist in a rank-{rank} tensor")]
    UnknownAxis { axis: usize, rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("covariance is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("ACS region too small: {0}")]
    AcsTooSmall(String),

    #[error("calibration normal matrix is singular; use a positive Tikhonov weight")]
    Singular,

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("method mismatch: {0}")]
    MethodMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("container field `{field}`: {msg}")]
    Container { field: &'static str, msg: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
