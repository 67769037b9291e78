//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, VraError>;

#[derive(Debug, Error)]
pub enum VraError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}, line {line}: {reason}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate video id `{0}`")]
    DuplicateVideoId(String),

    #[error("unknown video id `{0}`")]
    UnknownVideoId(String),

    #[error("feature dimension mismatch for `{video_id}`: expected {expected}, found {found}")]
    DimensionMismatch {
        video_id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("checksum mismatch in {path}")]
    ChecksumMismatch { path: PathBuf },

    #[error("video `{video_id}` has {n_frames} frame(s), need at least {needed}")]
    TooFewFrames {
        video_id: String,
        n_frames: usize,
        needed: usize,
    },

    #[error("standard deviation undefined over {0} frame(s); need at least 2")]
    UndefinedStd(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("video id order mismatch at position {index}: `{left}` vs `{right}`")]
    IdOrderMismatch {
        index: usize,
        left: String,
        right: String,
    },

    #[error("degenerate metric input: {0}")]
    DegenerateInput(String),

    #[error("non-finite gradient in {context}")]
    NonFiniteGradient { context: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),

    #[error("missing label for video `{0}`")]
    MissingLabel(String),

    #[error("training aborted at epoch {epoch}: {source}")]
    TrainingFailed {
        epoch: usize,
        #[source]
        source: Box<VraError>,
    },
}

impl VraError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VraError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            VraError::InvalidConfig(_) => 1,
            VraError::UndefinedStd(_)
            | VraError::DegenerateInput(_)
            | VraError::NonFiniteGradient { .. } => 3,
            VraError::TrainingFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
