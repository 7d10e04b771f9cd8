use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} is numerically singular at step {step} (reciprocal condition {rcond:e})")]
    Singular {
        what: &'static str,
        step: usize,
        rcond: f64,
    },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("observation subset {mask:?}: {source}")]
    Sampling {
        mask: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration bracket [{h_lo}, {h_hi}] does not straddle target {target} (ADD {add_lo} .. {add_hi})")]
    Bracket {
        h_lo: f64,
        h_hi: f64,
        target: f64,
        add_lo: f64,
        add_hi: f64,
    },

    #[error("calibration exceeded {iterations} iterations; best h = {best_h} (ADD {best_add})")]
    CalibrationIterations {
        iterations: usize,
        best_h: f64,
        best_add: f64,
    },

    #[error("all run-length samples are censored or excluded")]
    AllCensored,

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidModel(_) | Error::InvalidInput(_) | Error::Config { .. } => {
                ErrorClass::Config
            }
            Error::Csv { .. } | Error::Io { .. } => ErrorClass::Io,
            Error::Sampling { source, .. } => source.class(),
            _ => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
