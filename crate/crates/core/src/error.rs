use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("relaxation did not converge after {sweeps} sweeps (residual violation {residual:.3e} m)")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("invalid height map: {0}")]
    InvalidMap(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("mask inconsistent with goal map at cell ({row}, {col})")]
    MaskInconsistent { row: usize, col: usize },

    #[error("invalid goal: {0}")]
    InvalidGoal(String),

    #[error("goal generation failed for family {family} after {attempts} attempts")]
    GoalGeneration { family: String, attempts: usize },

    #[error("grid mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    GridMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("empty region: {0}")]
    EmptyRegion(&'static str),

    #[error("empty goal mask")]
    EmptyMask,

    #[error("step called after the episode finished")]
    EpisodeDone,

    #[error("step called before reset")]
    NotReset,

    #[error("camera is below the surface")]
    CameraBelowSurface,

    #[error("image geometry mismatch: {0}")]
    ImageMismatch(String),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Attach a file path to an error raised while handling that file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::Csv { .. } | Error::File { .. }) => e,
            other => Error::File {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }
}
