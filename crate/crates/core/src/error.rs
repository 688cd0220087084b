use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no series in input")]
    NoSeries,

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("duplicate entry for item `{item}` at {key}")]
    Duplicate { item: String, key: String },

    #[error("no signal: series `{0}` is entirely zero")]
    NoSignal(String),

    #[error("series `{item}` below minimum effective length: {length} < {required}")]
    BelowMinimumLength {
        item: String,
        length: usize,
        required: usize,
    },

    #[error("series too short: length {length} must exceed {required}")]
    TooShort { length: usize, required: usize },

    #[error("empty grouping")]
    EmptyGrouping,

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("missing forecast step {step} for item `{item}`")]
    MissingStep { item: String, step: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feature schema mismatch: expected {expected} columns, got {got}")]
    SchemaMismatch { expected: usize, got: usize },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("oracle intractable: model uses {0} distinct features (max 15)")]
    OracleIntractable(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no injected signal: {0}")]
    NoInjectedSignal(String),

    #[error("units error: {0}")]
    Units(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Bad input, configuration or missing prerequisites, as opposed to a
    /// failure while computing. The CLI exits with 2 for these and 1 otherwise.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NoSeries
                | Error::MalformedRow { .. }
                | Error::Duplicate { .. }
                | Error::NoSignal(_)
                | Error::BelowMinimumLength { .. }
                | Error::TooShort { .. }
                | Error::EmptyGrouping
                | Error::UnknownItem(_)
                | Error::MissingStep { .. }
                | Error::NonFinite(_)
                | Error::InvalidParameter(_)
                | Error::SchemaMismatch { .. }
                | Error::MissingArtifact { .. }
                | Error::Config(_)
        )
    }
}
