use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MASK is not a scoreable stage")]
    InvalidStage,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid hypnogram: {0}")]
    InvalidHypnogram(String),
    #[error("invalid hypnodensity: {0}")]
    InvalidHypnodensity(String),
    #[error("no scored epochs to evaluate")]
    NoScoredEpochs,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Sequence { line: usize, msg: String },
    #[error("line {line}: probabilities sum to {sum}, outside tolerance")]
    Normalization { line: usize, sum: f64 },
    #[error("input has no data rows")]
    EmptyInput,
    #[error("length mismatch: {0}")]
    Alignment(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("bundle has neither scorers nor models")]
    EmptyBundle,
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("non-finite value in field {0:?}")]
    Serialization(String),
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("ensemble needs at least one member")]
    EmptyEnsemble,
    #[error("consensus undefined at epoch {0}: every other scorer is masked")]
    UndefinedConsensus(usize),
    #[error("consensus set is empty")]
    EmptyConsensusSet,
    #[error("need at least {needed} scorers, got {got}")]
    TooFewScorers { needed: usize, got: usize },
    #[error("unknown scorer or model {0:?}")]
    UnknownName(String),

    #[error("kappa undefined: chance agreement equals 1")]
    DegenerateKappa,
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("hypnogram contains no sleep epochs")]
    NoSleep,

    #[error("need at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("covariance is zero; principal axis undefined")]
    DegenerateCovariance,
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("every held-out recording was skipped")]
    NoEvaluableFolds,

    #[error("{0} non-zero paired differences; need at least 5")]
    TooFewPairs(usize),

    #[error("invalid covariate: {0}")]
    InvalidCovariate(String),
    #[error("missing covariate {0:?}")]
    MissingCovariate(String),
    #[error("inflation masses nu={nu} and tau={tau} sum to 1 or more")]
    InvalidInflation { nu: f64, tau: f64 },
    #[error("row {row}: {msg}")]
    Schema { row: usize, msg: String },
}
