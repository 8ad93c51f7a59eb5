//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse failure at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid data{}: {message}", row_suffix(.row))]
    Invariant { row: Option<usize>, message: String },

    #[error("repetition {repetition}, fold {fold}: no {subgroup} rows in training split")]
    EmptyTrainingSubgroup {
        repetition: usize,
        fold: usize,
        subgroup: &'static str,
    },

    #[error("learner error: {0}")]
    Learner(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. } | Error::Invariant { .. } | Error::Io(_) | Error::Csv(_) => {
                ErrorKind::Data
            }
            Error::EmptyTrainingSubgroup { .. } | Error::Learner(_) | Error::Numeric(_) => {
                ErrorKind::Numeric
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
