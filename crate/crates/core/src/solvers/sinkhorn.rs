//! Multi-marginal entropic scaling in the log domain.
//!
//! The plan is `P = exp(-C/eps + sum_j f_j(i_j))`. Each sweep resets `f_j` so
//! that the `j`-th projection of `P` matches `mu_j` exactly, using a running
//! log-sum-exp so nothing overflows at small `eps`.
//!
//! When the optimum is close to a vertex of the coupling polytope the sweeps
//! alone converge sublinearly, so after a warm-up each sweep is preceded by a
//! damped Newton step on the concave dual.

use std::sync::Arc;
use std::time::Instant;

use super::{Method, Residuals, SolveReport};
use crate::costs::{cost_tensor, tensor_cap, CostSpec};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::plans::{PlanAtom, SparsePlan};

#[derive(Clone, Debug)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once every marginal's L1 violation is below this.
    pub tol: f64,
    pub tensor_cap: u128,
    /// Plain sweeps before Newton steps start; `None` disables them.
    pub newton_after: Option<usize>,
}

impl SinkhornOptions {
    pub fn new(epsilon: f64, max_iter: usize, tol: f64) -> Self {
        SinkhornOptions {
            epsilon,
            max_iter,
            tol,
            tensor_cap: tensor_cap(),
            newton_after: Some(NEWTON_AFTER),
        }
    }
}

const NEWTON_AFTER: usize = 20;
/// Newton steps need a dense solve in this many unknowns.
const NEWTON_MAX_UNKNOWNS: usize = 2000;

pub fn solve_sinkhorn(
    measures: &[Arc<DiscreteMeasure>],
    spec: &CostSpec,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SolveReport> {
    solve_sinkhorn_with(measures, spec, &SinkhornOptions::new(epsilon, max_iter, tol))
}

pub fn solve_sinkhorn_with(
    measures: &[Arc<DiscreteMeasure>],
    spec: &CostSpec,
    opts: &SinkhornOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {}", opts.tol)));
    }
    let (pruned, keep): (Vec<DiscreteMeasure>, Vec<Vec<usize>>) = measures.iter().map(|m| m.pruned()).unzip();
    let refs: Vec<&DiscreteMeasure> = pruned.iter().collect();
    let tensor = cost_tensor(spec, &refs, opts.tensor_cap)?;
    let shape = tensor.shape().to_vec();
    let n = shape.len();
    let log_k: Vec<f64> = tensor.data().iter().map(|c| -c / opts.epsilon).collect();
    let log_mu: Vec<Vec<f64>> = refs
        .iter()
        .map(|m| m.weights().iter().map(|w| w.ln()).collect())
        .collect();
    let mut f: Vec<Vec<f64>> = shape.iter().map(|&s| vec![0.0; s]).collect();

    let unknowns: usize = shape.iter().sum::<usize>() + 1 - n;
    let newton_after = opts.newton_after.filter(|_| unknowns <= NEWTON_MAX_UNKNOWNS);
    let mut iterations = 0;
    let mut violation = marginal_violations(&log_k, &shape, &f, &refs);
    while violation >= opts.tol && iterations < opts.max_iter {
        if newton_after.is_some_and(|w| iterations >= w) {
            newton_step(&log_k, &shape, &mut f, &refs);
        }
        for j in 0..n {
            let lse = log_sum_exp_except(&log_k, &shape, &f, j);
            for (fi, (lm, l)) in f[j].iter_mut().zip(log_mu[j].iter().zip(&lse)) {
                *fi = lm - l;
            }
        }
        iterations += 1;
        violation = marginal_violations(&log_k, &shape, &f, &refs);
    }

    let mut atoms = Vec::new();
    let mut value = 0.0;
    for_each_entry(&log_k, &shape, &f, |idx, q, logp| {
        let mass = logp.exp();
        if mass > 0.0 {
            value += mass * tensor.data()[q];
            atoms.push(PlanAtom {
                idx: idx.iter().enumerate().map(|(j, &i)| keep[j][i]).collect(),
                mass,
            });
        }
    });
    let plan_tol = violation.max(opts.tol) * (1.0 + 1e-9) + 1e-15;
    let plan = SparsePlan::with_tolerance(measures.to_vec(), atoms, plan_tol)?;
    let log_size: f64 = shape.iter().map(|&s| (s as f64).ln()).sum();
    let converged = violation < opts.tol;
    let report = SolveReport {
        value,
        method: Method::Sinkhorn,
        iterations,
        residuals: Residuals {
            marginal_violation: violation,
            epsilon: Some(opts.epsilon),
            entropic_bound: Some(opts.epsilon * log_size),
            converged,
            ..Residuals::default()
        },
        plan,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::Unconverged {
            iterations,
            violation,
            partial: Box::new(report),
        })
    }
}

/// Calls `g(multi_index, flat_index, log_p)` over the tensor in row-major
/// order.
fn for_each_entry(log_k: &[f64], shape: &[usize], f: &[Vec<f64>], mut g: impl FnMut(&[usize], usize, f64)) {
    let n = shape.len();
    let mut idx = vec![0usize; n];
    let mut prefix = vec![0.0; n + 1];
    for j in 0..n {
        prefix[j + 1] = prefix[j] + f[j][0];
    }
    for (q, lk) in log_k.iter().enumerate() {
        g(&idx, q, lk + prefix[n]);
        let mut j = n;
        while j > 0 {
            j -= 1;
            idx[j] += 1;
            if idx[j] < shape[j] {
                break;
            }
            idx[j] = 0;
        }
        for l in j..n {
            prefix[l + 1] = prefix[l] + f[l][idx[l]];
        }
    }
}

/// For each atom `i` of marginal `j`: log of the sum over the other indices
/// of `exp(log_k + sum_{l != j} f_l)`.
fn log_sum_exp_except(log_k: &[f64], shape: &[usize], f: &[Vec<f64>], j: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; shape[j]];
    let mut sum = vec![0.0; shape[j]];
    for_each_entry(log_k, shape, f, |idx, _, logp| {
        let i = idx[j];
        let v = logp - f[j][i];
        if v > max[i] {
            sum[i] = sum[i] * (max[i] - v).exp() + 1.0;
            max[i] = v;
        } else {
            sum[i] += (v - max[i]).exp();
        }
    });
    max.iter().zip(&sum).map(|(m, s)| m + s.ln()).collect()
}

/// Index of the potential entry `(j, i)` among the Newton unknowns; `(j, 0)`
/// is held fixed for `j >= 1` because shifting one potential up and another
/// down leaves the plan unchanged.
fn unknown(offsets: &[usize], j: usize, i: usize) -> Option<usize> {
    match (j, i) {
        (0, i) => Some(i),
        (_, 0) => None,
        (j, i) => Some(offsets[j] + i - 1),
    }
}

/// `sum_j <mu_j, f_j> - mass(P)`, or `None` when the mass overflows.
fn dual_objective(log_k: &[f64], shape: &[usize], f: &[Vec<f64>], mu: &[&DiscreteMeasure]) -> Option<f64> {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for_each_entry(log_k, shape, f, |_, _, v| {
        if v > max {
            sum = sum * (max - v).exp() + 1.0;
            max = v;
        } else {
            sum += (v - max).exp();
        }
    });
    let log_mass = max + sum.ln();
    if log_mass > 700.0 {
        return None;
    }
    let linear: f64 = f
        .iter()
        .zip(mu)
        .map(|(fj, m)| fj.iter().zip(m.weights()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Some(linear - log_mass.exp())
}

/// One damped Newton ascent step on the dual objective. Leaves `f`
/// unchanged if no ascent step is found.
fn newton_step(log_k: &[f64], shape: &[usize], f: &mut [Vec<f64>], mu: &[&DiscreteMeasure]) {
    let n = shape.len();
    let mut offsets = vec![0usize; n];
    let mut size = shape[0];
    for j in 1..n {
        offsets[j] = size;
        size += shape[j] - 1;
    }
    let mut h = vec![0.0; size * size];
    let mut grad = vec![0.0; size];
    for (j, m) in mu.iter().enumerate() {
        for (i, w) in m.weights().iter().enumerate() {
            if let Some(u) = unknown(&offsets, j, i) {
                grad[u] += w;
            }
        }
    }
    let mut vars = vec![None; n];
    for_each_entry(log_k, shape, f, |idx, _, logp| {
        let p = logp.exp();
        if p == 0.0 {
            return;
        }
        for (j, v) in vars.iter_mut().enumerate() {
            *v = unknown(&offsets, j, idx[j]);
        }
        for a in 0..n {
            let Some(ua) = vars[a] else { continue };
            grad[ua] -= p;
            for vb in &vars[a..] {
                if let Some(ub) = *vb {
                    h[ua * size + ub] += p;
                }
            }
        }
    });
    for a in 0..size {
        for b in 0..a {
            let v = h[a * size + b] + h[b * size + a];
            h[a * size + b] = v;
            h[b * size + a] = v;
        }
    }
    let Some(delta) = regularized_solve(&h, &grad, size) else {
        return;
    };
    let Some(base) = dual_objective(log_k, shape, f, mu) else {
        return;
    };
    let slope: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
    if !(slope > 0.0) {
        return;
    }
    let original: Vec<Vec<f64>> = f.to_vec();
    let mut t = 1.0;
    for _ in 0..40 {
        for j in 0..n {
            for i in 0..shape[j] {
                if let Some(u) = unknown(&offsets, j, i) {
                    f[j][i] = original[j][i] + t * delta[u];
                }
            }
        }
        if dual_objective(log_k, shape, f, mu).is_some_and(|v| v >= base + 1e-4 * t * slope) {
            return;
        }
        t *= 0.5;
    }
    f.clone_from_slice(&original);
}

/// Cholesky solve of `(H + lambda I) x = g`, raising `lambda` until the
/// factorization succeeds.
fn regularized_solve(h: &[f64], g: &[f64], size: usize) -> Option<Vec<f64>> {
    let scale = (0..size).map(|i| h[i * size + i]).fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let mut lambda = 1e-13 * scale;
    'attempt: for _ in 0..8 {
        let mut l = vec![0.0; size * size];
        for i in 0..size {
            for k in 0..=i {
                let mut v = h[i * size + k] + if i == k { lambda } else { 0.0 };
                for r in 0..k {
                    v -= l[i * size + r] * l[k * size + r];
                }
                if i == k {
                    if !(v > 0.0) {
                        lambda *= 100.0;
                        continue 'attempt;
                    }
                    l[i * size + i] = v.sqrt();
                } else {
                    l[i * size + k] = v / l[k * size + k];
                }
            }
        }
        let mut y = vec![0.0; size];
        for i in 0..size {
            let s: f64 = (0..i).map(|r| l[i * size + r] * y[r]).sum();
            y[i] = (g[i] - s) / l[i * size + i];
        }
        let mut x = vec![0.0; size];
        for i in (0..size).rev() {
            let s: f64 = (i + 1..size).map(|r| l[r * size + i] * x[r]).sum();
            x[i] = (y[i] - s) / l[i * size + i];
        }
        return Some(x);
    }
    None
}

/// Largest L1 violation over all marginals.
fn marginal_violations(log_k: &[f64], shape: &[usize], f: &[Vec<f64>], mu: &[&DiscreteMeasure]) -> f64 {
    let mut proj: Vec<Vec<f64>> = shape.iter().map(|&s| vec![0.0; s]).collect();
    for_each_entry(log_k, shape, f, |idx, _, logp| {
        let p = logp.exp();
        for (pj, &i) in proj.iter_mut().zip(idx) {
            pj[i] += p;
        }
    });
    proj.iter()
        .zip(mu)
        .map(|(p, m)| p.iter().zip(m.weights()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostKind;
    use crate::solvers::solve_lp;

    fn two_point() -> Arc<DiscreteMeasure> {
        Arc::new(DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap())
    }

    #[test]
    fn two_point_close_to_lp() {
        let mu = two_point();
        let spec = CostSpec::new(CostKind::Repulsive, 2, 1).unwrap();
        let r = solve_sinkhorn(&[mu.clone(), mu.clone()], &spec, 0.1, 10_000, 1e-10).unwrap();
        let lp = solve_lp(&[mu.clone(), mu], &spec).unwrap();
        assert!((r.value - lp.value).abs() < 0.2);
        assert!(r.value >= lp.value - 1e-12);
        assert!(r.residuals.marginal_violation < 1e-8);
        assert!(r.residuals.converged);
    }

    #[test]
    fn zero_weight_atom_ignored() {
        let mu = Arc::new(DiscreteMeasure::from_flat(1, vec![0.0, 3.0, 1.0], vec![0.5, 0.0, 0.5]).unwrap());
        let spec = CostSpec::new(CostKind::Repulsive, 2, 1).unwrap();
        let r = solve_sinkhorn(&[mu.clone(), mu], &spec, 0.5, 10_000, 1e-10).unwrap();
        assert!(r.value.is_finite());
        assert!(r.plan.atoms().iter().all(|a| !a.idx.contains(&1)));
    }

    #[test]
    fn unconverged_returns_partial() {
        let (c, r, l) = crate::measures::build_counterexample_parts(1, 1).unwrap();
        let ms = [Arc::new(c), Arc::new(r), Arc::new(l)];
        let spec = CostSpec::new(CostKind::Repulsive, 3, 1).unwrap();
        match solve_sinkhorn(&ms, &spec, 0.1, 1, 1e-14) {
            Err(Error::Unconverged {
                iterations, partial, ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(!partial.residuals.converged);
            }
            other => panic!("expected Unconverged, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let mu = two_point();
        let spec = CostSpec::new(CostKind::Repulsive, 2, 1).unwrap();
        assert!(solve_sinkhorn(&[mu.clone(), mu], &spec, 0.0, 10, 1e-8).is_err());
    }
}
