//! Error type shared across the toolkit.

use std::fmt;

pub type Result<T> = std::result::Result<T, BinetError>;

#[derive(Debug)]
pub enum BinetError {
    /// Tensor shapes incompatible for the requested operation.
    ShapeMismatch(String),
    /// Argument outside its documented domain (negative lr, q <= 0, ...).
    InvalidArgument(String),
    /// Operation requires a non-empty tensor.
    EmptyTensor(String),
    /// Class label outside [0, classes).
    LabelOutOfRange { label: usize, classes: usize },
    /// Model description violates a structural invariant.
    InvalidModel(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Serialized file does not start with the expected magic bytes.
    FormatMagic { expected: String, found: String },
    /// Serialized file carries an unsupported format version.
    FormatVersion { expected: u16, found: u16 },
    /// Serialized file ends before its declared payload.
    FormatTruncated(String),
    /// Stored checksum does not match the payload.
    FormatChecksum { expected: u32, found: u32 },
    /// Malformed dataset file (bad magic, bad record, label range).
    DatasetFormat(String),
}

impl fmt::Display for BinetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinetError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            BinetError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            BinetError::EmptyTensor(msg) => write!(f, "empty tensor: {msg}"),
            BinetError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            BinetError::InvalidModel(msg) => write!(f, "invalid model: {msg}"),
            BinetError::Io(e) => write!(f, "io error: {e}"),
            BinetError::FormatMagic { expected, found } => {
                write!(f, "bad magic: expected {expected:?}, found {found:?}")
            }
            BinetError::FormatVersion { expected, found } => {
                write!(f, "unsupported format version {found} (expected {expected})")
            }
            BinetError::FormatTruncated(msg) => write!(f, "truncated file: {msg}"),
            BinetError::FormatChecksum { expected, found } => {
                write!(f, "checksum mismatch: stored {expected:#010x}, computed {found:#010x}")
            }
            BinetError::DatasetFormat(msg) => write!(f, "dataset format error: {msg}"),
        }
    }
}

impl std::error::Error for BinetError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            BinetError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for BinetError {
    fn from(e: std::io::Error) -> Self {
        BinetError::Io(e)
    }
}

impl BinetError {
    /// Stable machine-readable category, used by the CLI for stderr reports.
    pub fn category(&self) -> &'static str {
        match self {
            BinetError::ShapeMismatch(_) => "shape",
            BinetError::InvalidArgument(_) => "argument",
            BinetError::EmptyTensor(_) => "empty-tensor",
            BinetError::LabelOutOfRange { .. } => "label-range",
            BinetError::InvalidModel(_) => "model",
            BinetError::Io(_) => "io",
            BinetError::FormatMagic { .. } => "format-magic",
            BinetError::FormatVersion { .. } => "format-version",
            BinetError::FormatTruncated(_) => "format-truncated",
            BinetError::FormatChecksum { .. } => "format-checksum",
            BinetError::DatasetFormat(_) => "dataset-format",
        }
    }
}
