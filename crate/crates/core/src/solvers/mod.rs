//! Minimization over the coupling polytope: exact simplex, entropic
//! scaling, and search over permutation tuples.

mod lp;
mod monge;
mod sinkhorn;

pub use lp::{perturbed_support_check, solve_lp, solve_lp_with, LpOptions, PerturbationCheck, PivotRule};
pub use monge::{monge_search, search_space_size, MongeMode, DEFAULT_RESTARTS, MONGE_BUDGET};
pub use sinkhorn::{solve_sinkhorn, solve_sinkhorn_with, SinkhornOptions};

use serde::{Deserialize, Serialize};

use crate::plans::SparsePlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LpExact,
    Sinkhorn,
    MongeSearch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest L1 distance between a projection of the plan and its marginal.
    pub marginal_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duality_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_value: Option<f64>,
    /// Most negative reduced cost at termination, as a nonnegative number.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_infeasibility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `epsilon * ln(prod_j n_j)`: the entropic value lies within this of the
    /// exact optimum (plus the marginal tolerance).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropic_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates_evaluated: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub value: f64,
    pub method: Method,
    pub iterations: usize,
    pub residuals: Residuals,
    pub plan: SparsePlan,
    pub wall_time_secs: f64,
}
