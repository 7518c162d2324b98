//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}, column '{column}': {reason}")]
    MalformedRow {
        line: u64,
        column: String,
        reason: String,
    },

    #[error("csv schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("duplicate dyad ({reporting}, {partner}, {subgroup})")]
    DuplicateDyad {
        reporting: String,
        partner: String,
        subgroup: String,
    },

    #[error("offshore-centre list is empty but min_ofcs = {min_ofcs}")]
    EmptyOfcList { min_ofcs: usize },

    #[error("no positive-profit observations for country {0}")]
    NoObservations(String),

    #[error("country metadata missing for {0}")]
    MissingMeta(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("design column '{0}' has zero variance")]
    DegenerateColumn(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("clustered covariance needs at least 2 clusters")]
    SingleCluster,

    #[error("activity total for '{0}' is zero; redistribution shares undefined")]
    ZeroActivityTotal(String),

    #[error("denominator '{denominator}' missing for group member {country}")]
    MissingDenominator {
        denominator: String,
        country: String,
    },

    #[error("feature count mismatch: model has {expected}, input rows have {got}")]
    FeatureCountMismatch { expected: usize, got: usize },

    #[error("category member estimates sum to zero")]
    ZeroEstimates,

    #[error("fewer than half of bootstrap replicates succeeded ({failed} of {total} failed)")]
    PipelineFailure { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid offset grid: {0}")]
    InvalidOffsetGrid(String),

    #[error("reference country '{0}' is not among the reporters")]
    ReferenceCountryMissing(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status the CLI maps this error to: 1 for input/validation
    /// problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateColumn(_)
            | Error::RankDeficient { .. }
            | Error::SingleCluster
            | Error::ZeroActivityTotal(_)
            | Error::ZeroEstimates
            | Error::PipelineFailure { .. } => 2,
            _ => 1,
        }
    }
}
