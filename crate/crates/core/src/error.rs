use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
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

    #[error("calibration line {line}: {message}")]
    CalibrationParse { line: usize, message: String },

    #[error("invalid calibration field `{field}`: {message}")]
    Calibration {
        field: &'static str,
        message: String,
    },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("width {width} is not divisible into {parts} equal parts")]
    Indivisible { width: usize, parts: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("descriptor {index} has zero norm (degenerate constant image?)")]
    ZeroNorm { index: usize },

    #[error("frame count mismatch for {what}: expected {expected}, found {found}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("bad magic {found:?}, expected \"PALD\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported interchange version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes inconsistent with count x dim: {0}")]
    LengthMismatch(String),

    #[error("ground truth: {0}")]
    GroundTruth(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

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

    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
