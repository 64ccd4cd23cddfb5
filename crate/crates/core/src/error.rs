use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: I/O failure: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported dtype: {dtype}")]
    UnsupportedDtype { path: PathBuf, dtype: String },
    #[error("{path}: dims/byte-count mismatch: dims {dims:?} need {expected} bytes, payload has {actual}")]
    SizeMismatch {
        path: PathBuf,
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("{path}: malformed header: field `{field}`: {reason}")]
    MalformedHeader {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("non-finite voxel at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("axis {axis} of length {len} is not divisible by patch size {patch_size}")]
    NotDivisible {
        axis: usize,
        len: usize,
        patch_size: usize,
    },
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("geometry out of bounds: {0}")]
    GeometryOutOfBounds(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}

impl Error {
    /// Stable short identifier, used for machine-parseable CLI errors and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::UnsupportedDtype { .. } => "unsupported_dtype",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::MalformedHeader { .. } => "malformed_header",
            Error::NonFinite { .. } => "non_finite",
            Error::DimMismatch(_) => "dim_mismatch",
            Error::NotDivisible { .. } => "not_divisible",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::GeometryOutOfBounds(_) => "geometry_out_of_bounds",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, field: &str, reason: impl Into<String>) -> Self {
        Error::MalformedHeader {
            path: path.into(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
