use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a PMAP byte stream was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PmapFault {
    BadMagic,
    UnsupportedVersion(u8),
    TruncatedHeader,
    ZeroDimension,
    PayloadLength { expected: u64, actual: u64 },
    NotANumber,
    OutOfRange,
}

impl std::fmt::Display for PmapFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PmapFault::BadMagic => write!(f, "bad magic (expected \"PMAP\")"),
            PmapFault::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            PmapFault::TruncatedHeader => write!(f, "truncated header"),
            PmapFault::ZeroDimension => write!(f, "zero width or height"),
            PmapFault::PayloadLength { expected, actual } => {
                write!(f, "payload length {actual} bytes, expected {expected}")
            }
            PmapFault::NotANumber => write!(f, "NaN value"),
            PmapFault::OutOfRange => write!(f, "value outside [0, 1]"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    Shape {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("PMAP parse error at byte offset {offset}: {fault}")]
    Pmap { offset: u64, fault: PmapFault },

    #[error("unsupported format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("manifest {path} line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("image {id}: {source}")]
    InImage {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("planted threshold check failed for sample {index}: {reason}")]
    PlantVerification { index: u64, reason: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_image(id: impl Into<String>, source: Error) -> Self {
        Error::InImage {
            id: id.into(),
            source: Box::new(source),
        }
    }
}
