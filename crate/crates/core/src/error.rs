use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum ActeError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("chronology error: game date {game} is not after previous game date {prev}")]
    Chronology { prev: String, game: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("encoding error: unseen level {level:?} for covariate {covariate:?}")]
    Encoding { covariate: String, level: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate arm: {0}")]
    DegenerateArm(String),

    #[error("propensity missing for age {0}")]
    PropensityMissing(i32),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("replicate {replicate} failed: no resample with both arms after {attempts} attempts")]
    ReplicateFailure { replicate: usize, attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing dependency: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Dependency(Vec<PathBuf>),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ActeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ActeError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ActeError>;
