use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),

    #[error("no value assigned to parent `{variable}`")]
    MissingParent { variable: String },

    #[error("directed cycle through variable `{variable}`")]
    Cycle { variable: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("value {value} out of range for `{variable}` (arity {arity})")]
    ValueOutOfRange {
        variable: String,
        value: usize,
        arity: usize,
    },

    #[error("invalid evidence: {0}")]
    Evidence(String),

    #[error("invalid action: {0}")]
    Action(String),

    #[error("state space of {states} configurations exceeds the enumeration cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    #[error("optimal distribution undefined: the evidence has zero probability (G = 0)")]
    ZeroTotal,

    #[error("infinite weight variance: g > 0 where the sampling distribution is 0")]
    InfiniteVariance,

    #[error("sampling probability of the configuration is zero")]
    ZeroProposal,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("combination weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("gradient row {row} of `{variable}` is not projected (step sum {sum:e})")]
    UnprojectedGradient {
        variable: String,
        row: usize,
        sum: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
