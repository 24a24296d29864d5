//! Error type shared by every module in this crate.

use thiserror::Error;

/// Errors produced by tensor algebra, quantization, the pipeline, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid shape: {rows}x{cols} does not hold {len} elements")]
    InvalidShape { rows: usize, cols: usize, len: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("rank {rank} out of range, must be <= {max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("group size must be positive")]
    InvalidGroupSize,

    #[error("integer bit width {bits} out of range, must be in 2..=8")]
    InvalidBitWidth { bits: u8 },

    #[error("alpha grid is empty")]
    EmptyGrid,

    #[error("alpha {alpha} outside [0, 1]")]
    InvalidAlpha { alpha: f64 },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("{what} must be {requirement}")]
    InvalidParam {
        what: &'static str,
        requirement: &'static str,
    },

    #[error("Hessian is singular after damping (Cholesky pivot {pivot} is not positive)")]
    SingularHessian { pivot: usize },

    #[error("bad magic: expected \"SVDQT\\0\"")]
    BadMagic,

    #[error("unsupported format version {version}")]
    BadVersion { version: u16 },

    #[error("unknown scalar dtype code {code}")]
    BadDType { code: u8 },

    #[error("unsupported ndim {ndim}, only 2-D tensors are stored")]
    BadNDim { ndim: u8 },

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("layer pack field `{field}` disagrees with file contents: {detail}")]
    ManifestMismatch { field: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
