use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic in {what}: expected {expected}, found {found}")]
    MagicMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch {
        what: String,
        expected: u16,
        found: u16,
    },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("record size mismatch in {what}: length {len} is not a multiple of {record}")]
    RecordSize {
        what: String,
        len: usize,
        record: usize,
    },

    #[error("label {label} out of range at record {index}")]
    LabelOutOfRange { index: usize, label: usize },

    #[error("degenerate channel {channel}: zero standard deviation")]
    DegenerateChannel { channel: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid topology `{input}`: {reason}")]
    Topology { input: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("layer {layer} is not trained")]
    UntrainedLayer { layer: usize },

    #[error("layer {layer} is already trained")]
    AlreadyTrained { layer: usize },

    #[error("initialization probability {p} exceeds 1 (weight-init constant too large)")]
    InitProbability { p: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            return Error::MissingFile(path.into());
        }
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingFile(_) | Error::Io { .. } => 3,
            Error::MagicMismatch { .. }
            | Error::Truncated { .. }
            | Error::VersionMismatch { .. }
            | Error::ChecksumMismatch { .. }
            | Error::RecordSize { .. }
            | Error::LabelOutOfRange { .. } => 4,
            Error::Topology { .. } | Error::Config(_) | Error::InitProbability { .. } => 2,
            Error::UntrainedLayer { .. } | Error::AlreadyTrained { .. } => 5,
            Error::DegenerateChannel { .. }
            | Error::Eigen(_)
            | Error::ZeroDenominator(_)
            | Error::EmptyDataset => 6,
            Error::Shape(_) => 7,
        }
    }
}
