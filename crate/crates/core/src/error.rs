use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{col}` is not a valid number")]
    NonNumericValue { row: usize, col: String },
    #[error("row {row}: event must be 0 or 1")]
    InvalidEvent { row: usize },
    #[error("row {0}: entry must be finite, non-negative and strictly less than exit")]
    InvalidInterval(usize),
    #[error("record {record}: expected {expected} covariates, found {found}")]
    DimensionMismatch {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("cutpoints must be finite and strictly increasing")]
    UnsortedCutpoints,
    #[error("record {0} spans more than one event time; split at event times first")]
    NotSplit(usize),
    #[error("covariate index {index} out of range for dimension {dim}")]
    CovariateIndex { index: usize, dim: usize },
    #[error("weight vector has length {found}, dataset has {expected} records")]
    WeightLength { expected: usize, found: usize },
    #[error("weights must be finite and non-negative")]
    InvalidWeight,
    #[error("coefficient vector has length {found}, expected {expected}")]
    BetaLength { expected: usize, found: usize },
    #[error("empty risk set at event time {time}")]
    EmptyRiskSet { time: f64 },
    #[error("information matrix is singular or not positive definite")]
    SingularInformation,
    #[error("Newton-Raphson did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("monotone likelihood: coefficients diverge (max |beta| = {max_abs_beta})")]
    MonotoneLikelihood { max_abs_beta: f64 },
    #[error("no censored record has a non-zero score residual")]
    AllZeroResiduals,
    #[error("dataset has no censored records")]
    NoCensored,
    #[error("dataset has no events")]
    NoEvents,
    #[error("censored record {0} has zero sampling probability but a non-zero score residual")]
    ZeroProbPositiveResidual(usize),
    #[error("pilot fit failed: {0}")]
    PilotDegenerate(Box<Error>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
