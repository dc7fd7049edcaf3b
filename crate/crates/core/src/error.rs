use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("dimension mismatch: map expects {expected}, input has {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("SVD did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("column {index} has (near) zero norm")]
    ZeroColumn { index: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("cannot truncate a {dim}-dimensional vector to {target} dimensions")]
    TargetTooLarge { dim: usize, target: usize },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("class {label} has a single sample")]
    SingletonClass { label: u32 },

    #[error("unsupported map format: {0}")]
    FormatVersionMismatch(String),

    #[error("anchor {anchor} has no same-label candidate")]
    NoPositive { anchor: usize },

    #[error("labels are required but missing")]
    MissingLabels,

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("{count} samples exceed the pairwise cap of {cap}")]
    TooLarge { count: usize, cap: usize },

    #[error("sets are not row-aligned: {0}")]
    Misaligned(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
