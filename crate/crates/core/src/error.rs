use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e} <= tolerance {tolerance:e}")]
    NotPositiveDefinite { eigenvalue: f64, tolerance: f64 },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("differential operator is numerically singular (condition number {condition:e})")]
    SingularOperator { condition: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("empty index range")]
    EmptyRange,

    #[error("sequence of length {n} is too short for bandwidth h = {h} (need n >= 2h)")]
    SequenceTooShort { n: usize, h: usize },

    #[error("scan position {x} outside valid range [{lo}, {hi}]")]
    InvalidPosition { x: usize, lo: usize, hi: usize },

    #[error("segment of length {len} cannot be split into {folds} folds")]
    InfeasibleFolds { len: usize, folds: usize },

    #[error("configuration fails the detectability condition (margin {margin:.4})")]
    NotDetectable { margin: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {source}")]
    InvalidEntry {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification, used by the CLI to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Parse { .. } => ErrorKind::Io,
            Error::InvalidDimension(_)
            | Error::DimensionMismatch { .. }
            | Error::Scenario(_)
            | Error::SequenceTooShort { .. }
            | Error::InvalidPosition { .. }
            | Error::InfeasibleFolds { .. }
            | Error::NotDetectable { .. }
            | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::NotSymmetric { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::NonFinite
            | Error::SingularOperator { .. }
            | Error::EmptyRange => ErrorKind::Numerical,
            Error::InvalidEntry { source, .. } => source.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
