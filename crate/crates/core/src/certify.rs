//! Hyperplane optimality certificate for costs of the form `|x_1 + ... + x_N|^2`.
//!
//! For every coupling `gamma` of `mu_1, ..., mu_N`, Jensen's inequality gives
//! `int |sum x_i|^2 dgamma >= |k|^2` with `k = sum_j mean(mu_j)`. A plan
//! supported on the hyperplane `{sum x_i = k}` attains the bound and is
//! therefore optimal, and the repulsive cost differs from the sum-square cost
//! by a constant that depends only on the marginals.

use serde::{Deserialize, Serialize};

use crate::costs::{CostKind, CostSpec};
use crate::error::{Error, Result};
use crate::measures::{moments, DiscreteMeasure};
use crate::plans::{plan_cost, SparsePlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedOptimal,
    GapReported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Hyperplane constant `sum_j mean(mu_j)`.
    pub k: Vec<f64>,
    /// `max |sum_i x_i - k|` over support atoms.
    pub max_deviation: f64,
    /// `|k|^2`, the Jensen lower bound on the sum-square cost.
    pub jensen_bound: f64,
    pub plan_sum_square_cost: f64,
    /// `plan_sum_square_cost - jensen_bound`; equals the variance of
    /// `sum_i x_i` under the plan.
    pub gap: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// `sum_j mean(mu_j)`.
pub fn hyperplane_constant(measures: &[&DiscreteMeasure]) -> Vec<f64> {
    let d = measures.first().map_or(0, |m| m.dim());
    let mut k = vec![0.0; d];
    for m in measures {
        for (acc, x) in k.iter_mut().zip(moments(m).mean) {
            *acc += x;
        }
    }
    k
}

/// `|sum_j mean(mu_j)|^2`.
pub fn jensen_bound(measures: &[&DiscreteMeasure]) -> f64 {
    hyperplane_constant(measures).iter().map(|x| x * x).sum()
}

/// `1e-9 (1 + diam^2)` with `diam` the diagonal of the bounding box of all
/// marginal supports together.
pub fn default_tolerance(plan: &SparsePlan) -> f64 {
    let mut sq = 0.0;
    for a in 0..plan.dim() {
        let (lo, hi) = plan
            .marginals()
            .iter()
            .flat_map(|m| m.points().map(move |p| p[a]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
        sq += (hi - lo) * (hi - lo);
    }
    1e-9 * (1.0 + sq)
}

pub fn hyperplane_certificate(plan: &SparsePlan, tol: Option<f64>) -> Result<Certificate> {
    let measures: Vec<&DiscreteMeasure> = plan.marginals().iter().map(|m| m.as_ref()).collect();
    let k = hyperplane_constant(&measures);
    let jensen = jensen_bound(&measures);
    let mut max_deviation: f64 = 0.0;
    let mut centered = 0.0;
    for a in plan.atoms() {
        let s = plan.tuple_sum(a);
        let dev2: f64 = s.iter().zip(&k).map(|(x, c)| (x - c) * (x - c)).sum();
        max_deviation = max_deviation.max(dev2.sqrt());
        centered += a.mass * dev2;
    }
    let spec = CostSpec::new(CostKind::SumSquare, plan.n_marginals(), plan.dim())?;
    let cost = plan_cost(&spec, plan)?;
    // For a feasible plan the mean of sum_i x_i is k, so the centered second
    // moment equals cost - |k|^2 without the cancellation.
    let gap = centered;
    let tolerance = tol.unwrap_or_else(|| default_tolerance(plan));
    let verdict = if max_deviation <= tolerance {
        Verdict::CertifiedOptimal
    } else {
        Verdict::GapReported
    };
    Ok(Certificate {
        k,
        max_deviation,
        jensen_bound: jensen,
        plan_sum_square_cost: cost,
        gap,
        tolerance,
        verdict,
    })
}

/// Distance of the plan's cost from the optimum lower bound. For the
/// repulsive cost the decomposition offset cancels, so the value equals the
/// sum-square gap.
pub fn optimality_gap(plan: &SparsePlan, spec: &CostSpec) -> Result<f64> {
    match spec.kind {
        CostKind::Attractive => Err(Error::Unsupported(
            "no hyperplane certificate for the attractive cost; use the LP duality gap".into(),
        )),
        CostKind::Repulsive | CostKind::SumSquare => {
            if spec.n_marginals != plan.n_marginals() || spec.dim != plan.dim() {
                return Err(Error::InvalidInput("cost shape does not match the plan".into()));
            }
            Ok(hyperplane_certificate(plan, None)?.gap)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructors::gamma0;
    use crate::measures::build_counterexample_parts;
    use crate::plans::PlanAtom;
    use std::sync::Arc;

    fn uniform01() -> Arc<DiscreteMeasure> {
        Arc::new(DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap())
    }

    #[test]
    fn gamma0_is_certified() {
        let cert = hyperplane_certificate(&gamma0(1, 2).unwrap(), None).unwrap();
        assert_eq!(cert.max_deviation, 0.0);
        assert_eq!(cert.gap, 0.0);
        assert_eq!(cert.verdict, Verdict::CertifiedOptimal);
        assert!(cert.k[0].abs() < 1e-12);
    }

    #[test]
    fn unique_coupling_of_diracs() {
        let d = |x| Arc::new(DiscreteMeasure::dirac(vec![x]).unwrap());
        let plan = SparsePlan::new(
            vec![d(0.0), d(0.0), d(1.0)],
            vec![PlanAtom {
                idx: vec![0, 0, 0],
                mass: 1.0,
            }],
        )
        .unwrap();
        let cert = hyperplane_certificate(&plan, None).unwrap();
        assert_eq!(cert.k, vec![1.0]);
        assert_eq!(cert.max_deviation, 0.0);
        assert_eq!(cert.jensen_bound, 1.0);
        assert_eq!(cert.verdict, Verdict::CertifiedOptimal);
    }

    #[test]
    fn monotone_coupling_has_unit_gap() {
        let mu = uniform01();
        let plan = SparsePlan::new(
            vec![mu.clone(), mu],
            vec![
                PlanAtom {
                    idx: vec![0, 0],
                    mass: 0.5,
                },
                PlanAtom {
                    idx: vec![1, 1],
                    mass: 0.5,
                },
            ],
        )
        .unwrap();
        let cert = hyperplane_certificate(&plan, None).unwrap();
        assert_eq!(cert.k, vec![1.0]);
        assert_eq!(cert.max_deviation, 1.0);
        assert_eq!(cert.plan_sum_square_cost, 2.0);
        assert_eq!(cert.gap, 1.0);
        assert_eq!(cert.verdict, Verdict::GapReported);

        let rep = CostSpec::new(CostKind::Repulsive, 2, 1).unwrap();
        assert_eq!(optimality_gap(&plan, &rep).unwrap(), 1.0);
        let att = CostSpec::new(CostKind::Attractive, 2, 1).unwrap();
        assert!(matches!(optimality_gap(&plan, &att), Err(Error::Unsupported(_))));
    }

    #[test]
    fn jensen_bounds() {
        let (c, r, l) = build_counterexample_parts(1, 3).unwrap();
        assert!(jensen_bound(&[&c, &r, &l]) < 1e-24);
        let z = DiscreteMeasure::dirac(vec![0.0]).unwrap();
        let o = DiscreteMeasure::dirac(vec![1.0]).unwrap();
        assert_eq!(jensen_bound(&[&z, &z, &o]), 1.0);
        let u = uniform01();
        assert_eq!(jensen_bound(&[&u, &u]), 1.0);
    }
}
