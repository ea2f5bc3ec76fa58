use thiserror::Error;

use crate::data::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{0}` not found")]
    MissingColumn(String),

    #[error("domain error: column `{column}` has value {value} on row {row}, expected 0 or 1")]
    NonBinary { column: String, row: usize, value: String },

    #[error("parse error: column `{column}` row {row}: cannot parse `{value}` as a number")]
    Parse { column: String, row: usize, value: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dataset failed validation with {} violation(s)", .0.len())]
    Validation(Vec<Violation>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("subgroup {0} not found among trial units")]
    SubgroupNotFound(i64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank deficient normal equations ({0}); use a positive ridge")]
    RankDeficient(String),

    #[error("kernel matrix is not positive definite even after jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("positivity violation: required cell {0} has zero probability")]
    PositivityViolation(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("method `{0}` is out of scope: it needs a Bayesian learner (BART or Bayesian GLM) that is not implemented")]
    OutOfScope(String),

    #[error("unknown method `{0}`; valid methods are {valid}", valid = crate::estimators::METHOD_IDS.join(", "))]
    UnknownMethod(String),

    #[error("{method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_method(self, method: &str) -> Error {
        Error::Method { method: method.to_string(), source: Box::new(self) }
    }
}
