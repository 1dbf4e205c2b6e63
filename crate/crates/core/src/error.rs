use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),

    #[error("class `{0}` has an all-zero vector")]
    ZeroVector(String),

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("strict diagonal dominance violated at ({row}, {col}): off-diagonal {value} vs diagonal {diagonal}")]
    DominanceViolation {
        row: usize,
        col: usize,
        value: f64,
        diagonal: f64,
    },

    #[error("negative similarity {value} at ({row}, {col}) with clamping disabled")]
    NegativeSimilarity { row: usize, col: usize, value: f64 },

    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("simrank did not converge in {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("index {index} out of range for {len} classes")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot move schedule backwards from step {current} to {requested}")]
    StepBackwards { current: u64, requested: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("curriculum axiom violated: {0}")]
    CurriculumViolation(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
