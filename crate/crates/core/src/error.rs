use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("dimension mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("malformed image file: {0}")]
    MalformedImage(String),

    #[error("unsupported image format (expected LPIMG001 float container or binary P5 PGM)")]
    UnsupportedFormat,

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("inadmissible patch configuration: {0}")]
    InadmissiblePatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("MCP proximal map undefined: a*mu/rho_t = {0} exceeds 1 (subproblem is not convex)")]
    NonConvexProx(f64),

    #[error("channel mismatch: kernel expects {expected} input channel(s), got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("iterates became non-finite at iteration {0}; the step size tau is likely too large")]
    Diverged(usize),

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Failures specific to the network weight file.
#[derive(Error, Debug)]
pub enum WeightsError {
    #[error("bad magic: expected LPRNETW1")]
    BadMagic,

    #[error("unsupported format version {0} (expected 1)")]
    VersionMismatch(u64),

    #[error("manifest is not valid: {0}")]
    Manifest(String),

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("unexpected tensor {0} for this configuration")]
    UnexpectedTensor(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("manifest/blob length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid value for {name}: {reason}")]
    InvalidValue { name: String, reason: String },
}
