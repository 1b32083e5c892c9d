use thiserror::Error;

/// Errors raised anywhere in the survey GLM pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("line {line}: bad weight {value:?} (weights must be finite and > 0)")]
    BadWeight { line: usize, value: String },

    #[error("line {line}: bad finite population correction {value:?} (must lie in [0, 1))")]
    BadFpc { line: usize, value: String },

    #[error("stratum `{stratum}` has conflicting finite population corrections {first} and {second}")]
    FpcConflict {
        stratum: String,
        first: f64,
        second: f64,
    },

    #[error("line {line}: missing value in design column `{column}`")]
    MissingDesignValue { line: usize, column: String },

    #[error("PSU `{psu}` appears in strata `{first}` and `{second}`")]
    PsuStratumConflict {
        psu: String,
        first: String,
        second: String,
    },

    #[error("dataset has no rows")]
    EmptyData,

    #[error("unknown column `{0}` in model")]
    UnknownColumn(String),

    #[error("column `{0}` is not numeric")]
    NotNumeric(String),

    #[error("reference level `{level}` not observed in column `{column}`")]
    UnknownReferenceLevel { column: String, level: String },

    #[error("every row has a missing value in the model columns")]
    AllRowsDropped,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("formula error at offset {offset}: {message}")]
    Formula { offset: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-positive degrees of freedom ({0})")]
    NonPositiveDf(f64),

    #[error("too few observations: n = {n}, p = {p}")]
    TooFewObservations { n: usize, p: usize },

    #[error("design matrix is rank deficient (rank {rank} < {p}); aliased columns: {aliased:?}")]
    RankDeficient {
        rank: usize,
        p: usize,
        aliased: Vec<String>,
    },

    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("stratum `{0}` has a single PSU")]
    SingletonStratum(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contrast has rank zero")]
    SingularContrast,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
