use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("roll/pitch of {0:.4} rad exceeds the planar tolerance")]
    RollPitchTooLarge(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence has {got} frames, at least {need} required")]
    TooFewFrames { got: usize, need: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {0}")]
    NanLoss(usize),
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("point sets differ in size ({0} vs {1})")]
    PointSetMismatch(usize, usize),
    #[error("no positive labels")]
    NoPositives,
    #[error("degenerate correspondence set")]
    Degenerate,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
