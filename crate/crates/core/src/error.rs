use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det:.9})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("invalid extents: min exceeds max on axis {axis}")]
    InvalidExtents { axis: usize },
    #[error("scale components must be positive, got {0:?}")]
    NonPositiveScale([f64; 3]),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("input list is empty")]
    EmptyInput,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bounding cube vertices do not form a parallelepiped")]
    NotAParallelepiped,
    #[error("invalid parameter `{0}`")]
    InvalidParameter(&'static str),
    #[error("optimization diverged at iteration {iter}")]
    Diverged { iter: usize },

    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PLY format: {0}")]
    UnsupportedFormat(String),
    #[error("PLY body truncated: {0}")]
    TruncatedBody(String),
    #[error("malformed PLY body: {0}")]
    MalformedBody(String),
    #[error("face {face} references vertex {index}, out of range")]
    FaceIndexOutOfRange { face: usize, index: i64 },

    #[error("expected 15 or 16 fields, got {0}")]
    WrongFieldCount(usize),
    #[error("field {index} ({name}) is not numeric: {value:?}")]
    NonNumericField {
        index: usize,
        name: &'static str,
        value: String,
    },
    #[error("field {name} has an invalid value: {value}")]
    InvalidField { name: &'static str, value: String },
    #[error("DontCare annotations cannot be converted to records")]
    DontCareRecord,

    #[error("line {line}: schema violation: {msg}")]
    SchemaViolation { line: usize, msg: String },
    #[error("line {line}: rotation is invalid (orthonormality error {ortho:.3e}, det {det:.9})")]
    InvalidRotation { line: usize, ortho: f64, det: f64 },

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("config file not found: {0}")]
    MissingFile(String),
    #[error("bad value for config key `{key}`: {msg}")]
    BadValue { key: String, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
