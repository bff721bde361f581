use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, stable across releases so scripts can branch on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    BadInput,
    DimensionMismatch,
    DegenerateScene,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::BadInput => "bad-input",
            ErrorCategory::DimensionMismatch => "dimension-mismatch",
            ErrorCategory::DegenerateScene => "degenerate-scene",
            ErrorCategory::Io => "io",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::BadInput => 2,
            ErrorCategory::DimensionMismatch => 3,
            ErrorCategory::DegenerateScene => 4,
            ErrorCategory::Io => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty image")]
    EmptyImage,
    #[error("empty cloud")]
    EmptyCloud,
    #[error("no frames supplied")]
    NoFrames,
    #[error("monodepth/image size mismatch: monodepth is {found_width}x{found_height}, expected {expected_width}x{expected_height}")]
    MonodepthSizeMismatch {
        expected_width: u32,
        expected_height: u32,
        found_width: u32,
        found_height: u32,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed point cloud {path}: {remainder} trailing bytes at byte offset {offset} (records are 16 bytes)")]
    MalformedCloud {
        path: PathBuf,
        offset: u64,
        remainder: u64,
    },
    #[error("calibration file {path}: missing key `{key}`")]
    MissingCalibKey { path: PathBuf, key: String },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
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
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::EmptyImage
            | Error::EmptyCloud
            | Error::NoFrames
            | Error::InvalidParameter(_)
            | Error::MalformedCloud { .. }
            | Error::MissingCalibKey { .. }
            | Error::Parse { .. } => ErrorCategory::BadInput,
            Error::MonodepthSizeMismatch { .. } | Error::DimensionMismatch(_) => {
                ErrorCategory::DimensionMismatch
            }
            Error::DegenerateScene(_) => ErrorCategory::DegenerateScene,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Image { source, .. } => match source {
                image::ImageError::IoError(_) => ErrorCategory::Io,
                _ => ErrorCategory::BadInput,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
