use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("real labels have no diffusion progress value")]
    RealHasNoProgress,
    #[error("step {0} is not in the configured step grid")]
    UnknownStep(u32),
    #[error("fake label without a step cannot be scored in the quality-graded space")]
    MissingStep,
    #[error("could not parse an answer from transcript: {0}")]
    ParseFailure(String),
    #[error("invalid answer space: {0}")]
    InvalidSpace(String),
    #[error("invalid sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("video too short for artifact placement: {0} frames (need at least 8)")]
    TooShort(usize),
    #[error("invalid artifact window start={start} len={len} for {frame_count} frames")]
    InvalidWindow {
        start: usize,
        len: usize,
        frame_count: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rollout group `{0}` has no manipulated responses")]
    MissingManipulatedGroup(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("distributions are not valid or reference lacks support: {0}")]
    SupportMismatch(String),
    #[error("too few frames to featurize: {0} (need at least 3)")]
    TooFewFrames(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty video")]
    EmptyVideo,
    #[error("sample `{0}` references a pair that does not exist or has no counterpart")]
    UnpairedSample(String),
    #[error("no preference pairs")]
    EmptyPairs,
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: String },
    #[error("checkpoint config digest {found} does not match the loading config {expected}")]
    DigestMismatch { found: String, expected: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
