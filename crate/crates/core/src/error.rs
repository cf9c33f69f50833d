use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("duplicate id `{id}` at row {row}")]
    DuplicateId { id: String, row: u64 },

    #[error("invalid value `{value}` for {what}: {reason}")]
    InvalidValue {
        what: &'static str,
        value: String,
        reason: String,
    },

    #[error("date of birth {dob} is after reference date {reference}")]
    BirthAfterReference {
        dob: chrono::NaiveDate,
        reference: chrono::NaiveDate,
    },

    #[error("unknown quasi-identifier field `{0}` (valid: {1})")]
    UnknownQiField(String, String),

    #[error("quasi-identifier field `{0}` is not available on this kind of record")]
    QiFieldUnavailable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible synthetic corpus: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, value: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            what,
            value: value.into(),
            reason: reason.into(),
        }
    }
}
