use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the toolkit.
///
/// Every variant maps to one [`ErrorKind`], which the CLI turns into an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("instance {label} has background-class pixel at ({row}, {col})")]
    Inconsistent { label: u32, row: usize, col: usize },

    #[error("invalid class id {class_id} (expected < {n_classes})")]
    InvalidClass { class_id: usize, n_classes: usize },

    #[error("class count for class {index} is zero; cost ratio undefined")]
    ZeroCount { index: usize },

    #[error("marker pixel ({row}, {col}) lies outside the watershed mask")]
    MarkerOutsideMask { row: usize, col: usize },

    #[error("image contains no tissue ({tissue_pixels} of {total_pixels} pixels above OD threshold)")]
    NoTissue {
        tissue_pixels: usize,
        total_pixels: usize,
    },

    #[error("stain directions are degenerate: {0}")]
    DegenerateStains(String),

    #[error("empty source set")]
    EmptySource,

    #[error("missing pairs for stems: {}", .0.join(", "))]
    MissingPairs(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Image { .. } | Error::Format { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
