use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NetlistError>;

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("image is empty")]
    EmptyImage,

    #[error("no components detected")]
    NoComponents,

    #[error("invalid PGM data: {0}")]
    InvalidPgm(String),

    #[error("invalid detection `{det_id}`: {reason}")]
    InvalidDetection { det_id: String, reason: String },

    #[error("invalid detections file: {0}")]
    InvalidDetectionsFile(String),

    #[error("SPICE parse error on line {line}: {reason}")]
    SpiceParse { line: usize, reason: String },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("detector failed: {0}")]
    Detector(String),
}

impl NetlistError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
