use thiserror::Error;

use crate::solvers::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cost tensor with {entries} entries exceeds the cap of {cap}")]
    TensorTooLarge { entries: u128, cap: u128 },

    #[error("infeasible plan: {0}")]
    InfeasiblePlan(String),

    #[error("marginals are not all equal: {0}")]
    NotExchangeable(String),

    #[error("atom {tuple:?} does not have one coordinate in each of L^k, C, R^k with a common k")]
    BlockStructureViolation { tuple: Vec<Vec<f64>> },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("solver did not converge in {iterations} iterations (marginal violation {violation:e})")]
    Unconverged {
        iterations: usize,
        violation: f64,
        partial: Box<SolveReport>,
    },

    #[error("atoms are not equally weighted")]
    NotEquallyWeighted,

    #[error("search space of {size} candidates exceeds the budget of {budget}")]
    BudgetExceeded { size: f64, budget: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
