use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PPM maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u64),
    #[error("truncated PPM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint version {0} is not supported")]
    VersionMismatch(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("unsupported checkpoint dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("invalid tensor name {0:?}")]
    InvalidName(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("no class directories or images under {0}")]
    EmptyDirectory(PathBuf),
    #[error("failed to decode {path}: {source}")]
    DecodeFailure {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("label fraction {0} is outside (0, 1]")]
    BadFraction(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown adjustment variant {0}")]
    BadVariant(String),
    #[error("{0} is not a geometric transform")]
    BadKind(String),
    #[error("magnitude {0} is outside [0, 10]")]
    BadMagnitude(f64),
    #[error("invalid transform parameter: {0}")]
    BadParameter(String),

    #[error("policy parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("unknown transform kind {0:?}")]
    UnknownKind(String),
    #[error("policy field {0} is out of range")]
    OutOfRange(String),

    #[error("image {height}x{width} is too small to crop")]
    ImageTooSmall { height: usize, width: usize },

    #[error("batch of {0} is too small for batch normalization")]
    BatchTooSmall(usize),
    #[error("forward trace does not match the network")]
    TraceMismatch,

    #[error("step {step} is outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("label {label} is out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("k = {k} is invalid for {classes} classes")]
    BadK { k: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
