use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value outside the operation's domain: {0}")]
    Domain(String),

    #[error("invalid disparity {0} (must be finite and > 0)")]
    InvalidDisparity(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no plane found: {0}")]
    NoPlane(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("masks do not partition the grid: {0}")]
    MaskPartition(String),

    #[error("non-finite loss component `{0}`")]
    NonFiniteComponent(&'static str),

    #[error("training diverged at step {step}: {what} is not finite")]
    Diverged { step: usize, what: String },

    #[error("unknown difficulty tag `{0}`")]
    UnknownDifficulty(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::InvalidDisparity(_) => "invalid_disparity",
            Error::Empty(_) => "empty",
            Error::NoPlane(_) => "no_plane",
            Error::DegenerateBox(_) => "degenerate_box",
            Error::MaskPartition(_) => "mask_partition",
            Error::NonFiniteComponent(_) => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::UnknownDifficulty(_) => "unknown_difficulty",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::Checkpoint(_) => "checkpoint",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
