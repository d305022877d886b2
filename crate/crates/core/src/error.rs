use std::path::PathBuf;

use crate::grid::CellId;

/// Errors produced by the core pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}, row {row}: {msg}")]
    Malformed { file: String, row: usize, msg: String },

    #[error("{file}, row {row}: duplicate cell ({}, {})", cell.cx, cell.cy)]
    DuplicateCell { file: String, row: usize, cell: CellId },

    #[error("duplicate key {key} in {what}")]
    DuplicateKey { what: &'static str, key: u64 },

    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },

    #[error("square at ({}, {}) with side {side} is not inside the grid", origin.cx, origin.cy)]
    SquareOutOfBounds { origin: CellId, side: u32 },

    #[error("squares {first} and {second} overlap once expanded by {buffer} buffer cells")]
    OverlappingSquares {
        first: usize,
        second: usize,
        buffer: u32,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cannot pool an empty set of ground features")]
    EmptyPool,

    #[error("image {0} has no scene activations")]
    MissingActivations(u64),

    #[error("cell ({}, {}) has no aerial feature", .0.cx, .0.cy)]
    MissingAerial(CellId),

    #[error("image {0} has no ground feature")]
    MissingGround(u64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0}")]
    InvalidInput(String),

    #[error("at least {needed} samples required, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("Kendall's tau-b is undefined: one input has only tied values")]
    UndefinedTau,

    #[error("backward pass called with a stale or mismatched forward cache")]
    StaleCache,

    #[error("the {0} split is empty")]
    EmptySplit(&'static str),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("failed to encode image: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(file: &str, row: usize, msg: impl Into<String>) -> Self {
        Error::Malformed {
            file: file.to_string(),
            row,
            msg: msg.into(),
        }
    }

    /// Whether the error stems from invalid inputs (as opposed to I/O or a
    /// numerical failure during a run).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Diverged { .. } | Error::Image(_) | Error::UndefinedTau
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
