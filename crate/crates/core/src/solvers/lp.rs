//! Revised simplex on the flattened cost tensor.
//!
//! Every column has exactly one entry in each marginal block, so the rows
//! `(j, 0)` for `j >= 1` are dropped to remove the rank defect. The starting
//! basis is the multi-marginal north-west corner, which is primal feasible,
//! so there is no phase one.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Method, Residuals, SolveReport};
use crate::costs::{cost_tensor, tensor_cap, CostSpec, CostTensor};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::plans::{northwest_corner_cells, PlanAtom, SparsePlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotRule {
    /// Smallest entering column index, smallest leaving basic index on ties.
    /// Cannot cycle.
    Bland,
    /// Most negative reduced cost, switching to Bland's rule after a streak
    /// of degenerate pivots until the objective moves again.
    Dantzig,
}

/// Consecutive degenerate pivots before the Dantzig rule hands over to Bland.
const DEGENERATE_STREAK: usize = 50;

#[derive(Clone, Debug)]
pub struct LpOptions {
    pub pivot_rule: PivotRule,
    pub max_iterations: usize,
    /// Recompute the basis inverse from scratch after this many pivots.
    pub refactor_every: usize,
    /// Adds `jitter * (1 + max|c|) * u` with `u` uniform in `[-1, 1]` to every
    /// cost entry before solving. The reported value uses the exact costs.
    pub jitter: Option<f64>,
    pub jitter_seed: u64,
    pub tensor_cap: u128,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            pivot_rule: PivotRule::Dantzig,
            max_iterations: 1_000_000,
            refactor_every: 100,
            jitter: None,
            jitter_seed: 0,
            tensor_cap: tensor_cap(),
        }
    }
}

/// Reduced costs above `-PRICE_TOL * (1 + max|c|)` count as nonnegative.
const PRICE_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-12;
/// Basic values below this are treated as degenerate zeros.
const ZERO_MASS: f64 = 1e-12;

pub fn solve_lp(measures: &[Arc<DiscreteMeasure>], spec: &CostSpec) -> Result<SolveReport> {
    solve_lp_with(measures, spec, &LpOptions::default())
}

pub fn solve_lp_with(measures: &[Arc<DiscreteMeasure>], spec: &CostSpec, opts: &LpOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let (pruned, keep): (Vec<DiscreteMeasure>, Vec<Vec<usize>>) = measures.iter().map(|m| m.pruned()).unzip();
    let refs: Vec<&DiscreteMeasure> = pruned.iter().collect();
    let exact = cost_tensor(spec, &refs, opts.tensor_cap)?;
    let costs = match opts.jitter {
        Some(scale) => jittered(&exact, scale, opts.jitter_seed),
        None => exact.data().to_vec(),
    };

    let mut lp = Simplex::new(&refs, exact.shape().to_vec(), costs, opts)?;
    lp.run()?;

    let n = measures.len();
    let mut atoms = Vec::new();
    let mut value = 0.0;
    let mut idx = vec![0usize; n];
    for (k, &q) in lp.basis.iter().enumerate() {
        let mass = lp.x[k];
        if mass <= ZERO_MASS {
            continue;
        }
        exact.unflatten(q, &mut idx);
        value += mass * exact.data()[q];
        atoms.push(PlanAtom {
            idx: idx.iter().enumerate().map(|(j, &i)| keep[j][i]).collect(),
            mass,
        });
    }
    let plan = SparsePlan::new(measures.to_vec(), atoms)?;
    let dual_value = lp.dual_value(&exact);
    let dual_infeasibility = lp.dual_infeasibility(exact.data());
    Ok(SolveReport {
        value,
        method: Method::LpExact,
        iterations: lp.iterations,
        residuals: Residuals {
            marginal_violation: plan.marginal_violation_l1(),
            duality_gap: Some((value - dual_value).abs()),
            dual_value: Some(dual_value),
            dual_infeasibility: Some(dual_infeasibility),
            converged: true,
            ..Residuals::default()
        },
        plan,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn jittered(tensor: &CostTensor, scale: f64, seed: u64) -> Vec<f64> {
    let amp = scale * (1.0 + tensor.data().iter().fold(0.0f64, |m, c| m.max(c.abs())));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tensor
        .data()
        .iter()
        .map(|c| c + amp * rng.gen_range(-1.0..=1.0))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationCheck {
    pub jitter: f64,
    pub seed: u64,
    pub base_support: Vec<Vec<usize>>,
    pub perturbed_support: Vec<Vec<usize>>,
    pub unchanged: bool,
}

/// Solves twice, once with cost jitter of relative size `jitter`, and
/// compares the supports. An unchanged support under generic perturbation
/// witnesses that the unperturbed optimum is the unique one.
pub fn perturbed_support_check(
    measures: &[Arc<DiscreteMeasure>],
    spec: &CostSpec,
    jitter: f64,
    seed: u64,
) -> Result<PerturbationCheck> {
    let base = solve_lp(measures, spec)?;
    let opts = LpOptions {
        jitter: Some(jitter),
        jitter_seed: seed,
        ..LpOptions::default()
    };
    let perturbed = solve_lp_with(measures, spec, &opts)?;
    let base_support = base.plan.support();
    let perturbed_support = perturbed.plan.support();
    Ok(PerturbationCheck {
        jitter,
        seed,
        unchanged: base_support == perturbed_support,
        base_support,
        perturbed_support,
    })
}

struct Simplex<'a> {
    shape: Vec<usize>,
    strides: Vec<usize>,
    /// First row of each marginal block; block `j >= 1` starts at its atom 1.
    row_offset: Vec<usize>,
    m: usize,
    c: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Row-major `m x m` inverse of the basis matrix.
    binv: Vec<f64>,
    x: Vec<f64>,
    price_tol: f64,
    iterations: usize,
    since_refactor: usize,
    degenerate_streak: usize,
    opts: &'a LpOptions,
}

impl<'a> Simplex<'a> {
    fn new(measures: &[&DiscreteMeasure], shape: Vec<usize>, c: Vec<f64>, opts: &'a LpOptions) -> Result<Self> {
        let n = shape.len();
        let mut row_offset = vec![0usize; n];
        let mut m = shape[0];
        for j in 1..n {
            row_offset[j] = m;
            m += shape[j] - 1;
        }
        let mut b = Vec::with_capacity(m);
        b.extend_from_slice(measures[0].weights());
        for mu in &measures[1..] {
            b.extend_from_slice(&mu.weights()[1..]);
        }
        let strides = crate::costs::row_major_strides(&shape);
        let weights: Vec<&[f64]> = measures.iter().map(|mu| mu.weights()).collect();
        let orders: Vec<Vec<usize>> = shape.iter().map(|&s| (0..s).collect()).collect();
        let cells = northwest_corner_cells(&weights, &orders);
        debug_assert_eq!(cells.len(), m);
        let basis: Vec<usize> = cells
            .iter()
            .map(|(idx, _)| idx.iter().zip(&strides).map(|(i, s)| i * s).sum())
            .collect();
        let mut is_basic = vec![false; c.len()];
        for &q in &basis {
            is_basic[q] = true;
        }
        let price_tol = PRICE_TOL * (1.0 + c.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut lp = Simplex {
            shape,
            strides,
            row_offset,
            m,
            c,
            b,
            basis,
            is_basic,
            binv: Vec::new(),
            x: Vec::new(),
            price_tol,
            iterations: 0,
            since_refactor: 0,
            degenerate_streak: 0,
            opts,
        };
        lp.refactor()?;
        Ok(lp)
    }

    fn row(&self, j: usize, i: usize) -> Option<usize> {
        if j == 0 {
            Some(i)
        } else if i == 0 {
            None
        } else {
            Some(self.row_offset[j] + i - 1)
        }
    }

    fn column_rows(&self, mut q: usize, out: &mut Vec<usize>) {
        out.clear();
        for (j, s) in self.strides.iter().enumerate() {
            let i = q / s;
            q %= s;
            if let Some(r) = self.row(j, i) {
                out.push(r);
            }
        }
    }

    /// Rebuilds `B^-1` by Gauss-Jordan elimination with partial pivoting and
    /// recomputes the basic solution.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0f64; m * m];
        let mut rows = Vec::new();
        for (k, &q) in self.basis.iter().enumerate() {
            self.column_rows(q, &mut rows);
            for &r in &rows {
                a[r * m + k] = 1.0;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let p = (col..m)
                .max_by(|&x, &y| a[x * m + col].abs().total_cmp(&a[y * m + col].abs()))
                .unwrap_or(col);
            let piv = a[p * m + col];
            if piv.abs() < SINGULAR_TOL {
                return Err(Error::SolverFailure(format!(
                    "singular basis at column {col} after {} pivots (pivot {piv:e}, basis size {m})",
                    self.iterations
                )));
            }
            if p != col {
                for k in 0..m {
                    a.swap(p * m + k, col * m + k);
                    inv.swap(p * m + k, col * m + k);
                }
            }
            for k in 0..m {
                a[col * m + k] /= piv;
                inv[col * m + k] /= piv;
            }
            for r in 0..m {
                let f = a[r * m + col];
                if r == col || f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    a[r * m + k] -= f * a[col * m + k];
                    inv[r * m + k] -= f * inv[col * m + k];
                }
            }
        }
        self.binv = inv;
        self.x = (0..m)
            .map(|k| (0..m).map(|r| self.binv[k * m + r] * self.b[r]).sum())
            .collect();
        let worst = self.x.iter().copied().fold(0.0f64, f64::min);
        if worst < -1e-9 {
            return Err(Error::SolverFailure(format!(
                "basic solution lost feasibility ({worst:e}) after {} pivots",
                self.iterations
            )));
        }
        for v in &mut self.x {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (k, &q) in self.basis.iter().enumerate() {
            let cb = self.c[q];
            if cb == 0.0 {
                continue;
            }
            let row = &self.binv[k * m..(k + 1) * m];
            for (yr, v) in y.iter_mut().zip(row) {
                *yr += cb * v;
            }
        }
        y
    }

    /// Per-marginal potentials, zero on the dropped rows.
    fn potentials(&self, y: &[f64]) -> Vec<Vec<f64>> {
        self.shape
            .iter()
            .enumerate()
            .map(|(j, &s)| (0..s).map(|i| self.row(j, i).map_or(0.0, |r| y[r])).collect())
            .collect()
    }

    /// Calls `f(q, reduced_cost)` for every column in flat order; stops
    /// early when `f` returns false.
    fn scan(&self, c: &[f64], u: &[Vec<f64>], mut f: impl FnMut(usize, f64) -> bool) {
        let n = self.shape.len();
        let mut idx = vec![0usize; n];
        // prefix[j] = sum of u_l[i_l] for l < j
        let mut prefix = vec![0.0; n + 1];
        for j in 0..n {
            prefix[j + 1] = prefix[j] + u[j][0];
        }
        for (q, &cq) in c.iter().enumerate() {
            if !f(q, cq - prefix[n]) {
                return;
            }
            let mut j = n;
            while j > 0 {
                j -= 1;
                idx[j] += 1;
                if idx[j] < self.shape[j] {
                    break;
                }
                idx[j] = 0;
            }
            for l in j..n {
                prefix[l + 1] = prefix[l] + u[l][idx[l]];
            }
        }
    }

    fn rule(&self) -> PivotRule {
        if self.degenerate_streak >= DEGENERATE_STREAK {
            PivotRule::Bland
        } else {
            self.opts.pivot_rule
        }
    }

    fn entering(&self) -> Option<usize> {
        let u = self.potentials(&self.duals());
        let tol = self.price_tol;
        let mut best: Option<(usize, f64)> = None;
        match self.rule() {
            PivotRule::Bland => self.scan(&self.c, &u, |q, r| {
                if r < -tol && !self.is_basic[q] {
                    best = Some((q, r));
                    false
                } else {
                    true
                }
            }),
            PivotRule::Dantzig => self.scan(&self.c, &u, |q, r| {
                if r < -tol && !self.is_basic[q] && best.is_none_or(|(_, br)| r < br) {
                    best = Some((q, r));
                }
                true
            }),
        }
        best.map(|(q, _)| q)
    }

    fn run(&mut self) -> Result<()> {
        let mut rows = Vec::new();
        loop {
            let q = match self.entering() {
                Some(q) => q,
                None if self.since_refactor == 0 => return Ok(()),
                None => {
                    // confirm optimality on a fresh inverse
                    self.refactor()?;
                    continue;
                }
            };
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::SolverFailure(format!(
                    "pivot limit of {} reached",
                    self.opts.max_iterations
                )));
            }
            let m = self.m;
            let rule = self.rule();
            self.column_rows(q, &mut rows);
            let w: Vec<f64> = (0..m)
                .map(|k| rows.iter().map(|&r| self.binv[k * m + r]).sum())
                .collect();
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..m {
                if w[k] <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.x[k] / w[k];
                leave = match leave {
                    None => Some((k, ratio)),
                    Some((lk, lr)) => {
                        let better = if ratio < lr - 1e-15 {
                            true
                        } else if ratio <= lr + 1e-15 {
                            match rule {
                                PivotRule::Bland => self.basis[k] < self.basis[lk],
                                PivotRule::Dantzig => w[k] > w[lk],
                            }
                        } else {
                            false
                        };
                        if better {
                            Some((k, ratio))
                        } else {
                            Some((lk, lr))
                        }
                    }
                };
            }
            let Some((p, theta)) = leave else {
                return Err(Error::SolverFailure(format!(
                    "unbounded direction at column {q}; the coupling polytope is bounded, so the basis inverse is corrupt"
                )));
            };
            let theta = theta.max(0.0);
            if theta > 0.0 {
                self.degenerate_streak = 0;
            } else {
                self.degenerate_streak += 1;
            }
            for (k, (x, wk)) in self.x.iter_mut().zip(&w).enumerate() {
                if k != p {
                    *x = (*x - theta * wk).max(0.0);
                }
            }
            self.x[p] = theta;
            let piv = w[p];
            let (before, rest) = self.binv.split_at_mut(p * m);
            let (prow, after) = rest.split_at_mut(m);
            prow.iter_mut().for_each(|v| *v /= piv);
            for (k, row) in before.chunks_exact_mut(m).enumerate() {
                let f = w[k];
                if f != 0.0 {
                    row.iter_mut().zip(prow.iter()).for_each(|(v, pv)| *v -= f * pv);
                }
            }
            for (k, row) in after.chunks_exact_mut(m).enumerate() {
                let f = w[p + 1 + k];
                if f != 0.0 {
                    row.iter_mut().zip(prow.iter()).for_each(|(v, pv)| *v -= f * pv);
                }
            }
            self.is_basic[self.basis[p]] = false;
            self.is_basic[q] = true;
            self.basis[p] = q;
            self.iterations += 1;
            self.since_refactor += 1;
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
        }
    }

    /// `sum_r y_r b_r` with duals computed for the exact costs.
    fn dual_value(&self, exact: &CostTensor) -> f64 {
        let y = self.exact_duals(exact.data());
        y.iter().zip(&self.b).map(|(a, b)| a * b).sum()
    }

    fn exact_duals(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (k, &q) in self.basis.iter().enumerate() {
            let row = &self.binv[k * m..(k + 1) * m];
            for (yr, v) in y.iter_mut().zip(row) {
                *yr += c[q] * v;
            }
        }
        y
    }

    fn dual_infeasibility(&self, c: &[f64]) -> f64 {
        let u = self.potentials(&self.exact_duals(c));
        let mut worst = 0.0f64;
        self.scan(c, &u, |_, r| {
            worst = worst.max(-r);
            true
        });
        worst + 0.0
    }
}
