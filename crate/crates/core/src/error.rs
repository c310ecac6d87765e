use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("numeric overflow: non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("misaligned parameter structures: {0}")]
    Misaligned(String),

    #[error("degenerate group `{0}`: zero weight norm under fixed-magnitude noise")]
    DegenerateGroup(String),

    #[error("parameter count {count} exceeds the dense Hessian cap of {cap}")]
    CapExceeded { count: usize, cap: usize },

    #[error("degenerate plane: third model is collinear with the first two")]
    Collinear,

    #[error("bad magic number in {file}: expected {expected:#010x}, observed {observed:#010x}")]
    BadMagic { file: String, expected: u32, observed: u32 },

    #[error("truncated input in {0}")]
    Truncated(String),

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("framing error: file length {len} is not a multiple of the {record}-byte record size")]
    Framing { len: usize, record: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::EmptyRequest(_) => "empty_request",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Misaligned(_) => "misaligned",
            Error::DegenerateGroup(_) => "degenerate_group",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::Collinear => "collinear",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated(_) => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Framing { .. } => "framing",
            Error::Checkpoint(_) => "checkpoint",
            Error::Parse(_) => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
