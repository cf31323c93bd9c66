use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or file failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Two maps or images that must share a size do not.
    #[error("dimension mismatch: expected {expected:?}, got {found:?}")]
    Dimension { expected: (usize, usize), found: (usize, usize) },

    /// Pose sampling could not find a camera position outside the geometry.
    #[error("pose sampling failed for pair {pair} after {attempts} attempts: camera inside geometry")]
    PoseSampling { pair: usize, attempts: usize },

    /// Flow value not representable in the 16-bit interchange format.
    #[error("flow {value} px at pixel ({x}, {y}) exceeds the encodable range")]
    FlowOutOfRange { x: usize, y: usize, value: f64 },

    /// A file had the wrong binary layout, bit depth or channel count.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },

    /// Sample ids of predictions and ground truth do not line up.
    #[error("sample id mismatch; missing: {missing:?}")]
    IdMismatch { missing: Vec<String> },

    #[error("unknown sample id {0}")]
    UnknownSample(String),

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds { x: i64, y: i64, width: usize, height: usize },

    #[error("evaluation mask selects no pixels")]
    EmptyMask,

    #[error("evaluation mask selects pixel ({x}, {y}) where ground truth is invalid")]
    MaskOutsideGroundTruth { x: usize, y: usize },

    #[error("non-positive depth ratio {value} at pixel ({x}, {y})")]
    NonPositiveRatio { x: usize, y: usize, value: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::PoseSampling { .. } | Error::Schema { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
