use thiserror::Error;

use crate::dual::EquilibriumResult;

/// Instance invariants checked at load time. The message names the violated invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("instance has no buyers")]
    NoBuyers,
    #[error("breakpoints must start at 0 and end at 1 (got {first} .. {last})")]
    GridEndpoints { first: f64, last: f64 },
    #[error("breakpoints must be strictly increasing (breakpoint {index} = {value} after {previous})")]
    UnsortedGrid { index: usize, previous: f64, value: f64 },
    #[error("{what}: expected {expected} entries, found {found}")]
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("budget of buyer {buyer} must be positive (got {value})")]
    NonpositiveBudget { buyer: usize, value: f64 },
    #[error("negative density for buyer {buyer} on segment {segment}: v({theta}) = {value}")]
    NegativeDensity {
        buyer: usize,
        segment: usize,
        theta: f64,
        value: f64,
    },
    #[error("buyer {buyer} has zero total value on [0,1]")]
    ZeroValueBuyer { buyer: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    Validation(#[from] ValidationError),
    #[error("utility {requested} exceeds the remaining value {available} of the piece")]
    UnreachableUtility { requested: f64, available: f64 },
    #[error("cannot cut positive utility {requested} from a zero-density piece")]
    DegeneratePiece { requested: f64 },
    #[error("utility prices must be positive (beta[{index}] = {value})")]
    Domain { index: usize, value: f64 },
    #[error("utilities are infeasible on segment [{lo}, {hi}]: cut overruns by {overrun}")]
    InfeasibleUtilities { lo: f64, hi: f64, overrun: f64 },
    #[error("solver stopped after {iterations} iterations with duality gap {gap}")]
    NotConverged {
        iterations: usize,
        gap: f64,
        best: Box<EquilibriumResult>,
    },
    #[error("proportional response stopped after {rounds} rounds with duality gap {gap}")]
    OracleNotConverged { rounds: usize, gap: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
