use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // tensorio
    #[error("bad magic {found:?}, expected \"DCFT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported DCFT version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported DCFT dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid dimensions {height}x{width}x{dim}")]
    InvalidDimensions {
        height: usize,
        width: usize,
        dim: usize,
    },
    #[error("unsupported PNG: {0}")]
    UnsupportedPng(String),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec failure on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),

    // affinity
    #[error("patch {index} has a zero-norm embedding")]
    ZeroNormPatch { index: usize },
    #[error("node {index} has non-positive degree {degree}")]
    NonPositiveDegree { index: usize, degree: f64 },
    #[error("empty node subset")]
    EmptySubset,
    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate node index {0} in subset")]
    DuplicateIndex(usize),

    // spectral
    #[error("eigensolver did not reach residual {tolerance:e} (best {residual:e}) after {iterations} iterations")]
    ConvergenceFailure {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    // ncut
    #[error("one side of the bipartition is empty")]
    EmptySide,
    #[error("no threshold yields a valid split")]
    NoValidSplit,

    // autosc
    #[error("need at least {needed} eigenvalues, got {got}")]
    TooFewEigenvalues { needed: usize, got: usize },
    #[error("anchor block is numerically singular")]
    SingularAnchors,
    #[error("k = {k} is invalid for {n} points")]
    KTooLarge { k: usize, n: usize },

    // highres
    #[error("segment {0} is empty")]
    EmptySegment(usize),
    #[error("concept {0} has a zero-norm embedding")]
    ZeroNormConcept(usize),
    #[error("pixel {index} has a zero-norm upsampled feature")]
    ZeroNormPixel { index: usize },

    // evalkit
    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
