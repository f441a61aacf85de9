use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm below {eps:e}; cannot normalize")]
    ZeroVector { eps: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("batch of {0} samples is too small; pairwise loss needs at least 2")]
    BatchTooSmall(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("could not place {classes} prototypes in {dim} dimensions with minimum angle {min_angle} after {attempts} attempts")]
    InfeasibleSeparation {
        classes: usize,
        dim: usize,
        min_angle: f64,
        attempts: usize,
    },

    #[error("value {0} outside the pixel range [0, 255]")]
    Range(f64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("label {label} at line {line} is out of range for {classes} classes")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        classes: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input")]
    EmptyInput,

    #[error("{pairs} pairs cannot be split into {folds} folds")]
    TooFewPairs { pairs: usize, folds: usize },

    #[error("series of length {len} is shorter than the window end {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("epoch {epoch} outside 1..={epochs}")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown loss kind `{0}`")]
    UnknownLossKind(String),

    #[error("no completed runs found under {0}")]
    NoRunsFound(PathBuf),

    #[error("run {run_id} failed: {source}")]
    Run {
        run_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn mismatch(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by user configuration rather than a failing run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::UnknownLossKind(_) | Error::InvalidConfig(_)
        )
    }
}
