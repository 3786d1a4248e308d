use std::path::PathBuf;

use chrono::NaiveDate;

use crate::od::Granularity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
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
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}:{line}: {message}")]
    InvalidRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("municipality `{0}` is not mapped to any province")]
    UnmappedMunicipality(String),

    #[error("province `{0}` is not part of the territory")]
    UnknownProvince(String),

    #[error("municipality `{municipality}` maps to both `{first}` and `{second}`")]
    ConflictingProvince {
        municipality: String,
        first: String,
        second: String,
    },

    #[error("expected {expected} granularity, got {found}")]
    GranularityMismatch {
        expected: Granularity,
        found: Granularity,
    },

    #[error("no {granularity} OD matrix stored for {date}")]
    NotFound {
        date: NaiveDate,
        granularity: Granularity,
    },

    #[error("{path}: unsupported schema (found {found}, expected {expected})")]
    SchemaVersion {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("territory checksum mismatch: store has {stored}, caller has {requested}")]
    TerritoryMismatch { stored: String, requested: String },

    #[error("normalization needs at least 2 provinces, territory has {0}")]
    TooFewProvinces(usize),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
