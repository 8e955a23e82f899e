//! The two headline experiments: reproducing the symmetric counterexample
//! and measuring the Monge gap on equal-mass atomizations.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{hyperplane_certificate, optimality_gap, Certificate};
use crate::constructors::{gamma0, gamma1};
use crate::costs::{tensor_cap, CostKind, CostSpec};
use crate::error::{Error, Result};
use crate::measures::{
    build_counterexample_measure, build_counterexample_parts, equal_mass_counterexample, DiscreteMeasure,
};
use crate::plans::{graph_multiplicity, plan_cost, symmetrize, GraphDiagnostic, SparsePlan};
use crate::solvers::{monge_search, perturbed_support_check, solve_lp, solve_sinkhorn, MongeMode};

pub const SCHEMA_VERSION: &str = "1.0.0";

/// Relative size of the cost jitter in the uniqueness check.
pub const JITTER: f64 = 1e-7;
/// Mass threshold for the multiplicity histograms.
pub const MULTIPLICITY_MASS_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 200_000;
pub const SINKHORN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub d: usize,
    #[serde(rename = "N")]
    pub n_marginals: usize,
    pub cost: CostKind,
    /// Atoms per block (`reproduce`) or total atom counts (`gap`).
    pub resolutions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<MongeMode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornPoint {
    pub epsilon: f64,
    pub value: f64,
    pub marginal_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sum-square variance of the entropic plan.
    pub certificate_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub resolution: usize,
    pub lp_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetric_lp_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monge_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    /// Coordinate -> multiplicity histogram of the symmetrized optimum.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub multiplicity_histograms: BTreeMap<usize, BTreeMap<usize, usize>>,
    /// Same for the raw LP vertex before symmetrization.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw_multiplicity_histograms: BTreeMap<usize, BTreeMap<usize, usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sinkhorn: Vec<SinkhornPoint>,
    pub checks: Vec<Check>,
    /// Atoms present in only one of two plans that should agree.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failing_atoms: Vec<Vec<Vec<f64>>>,
    pub input_hashes: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub tensor_cap: u128,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            tensor_cap: tensor_cap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: String,
    pub experiment: String,
    pub parameters: Parameters,
    pub results: Vec<ResolutionResult>,
    /// Checks spanning several resolutions.
    pub checks: Vec<Check>,
    pub passed: bool,
    pub environment: Environment,
}

impl ExperimentReport {
    fn finish(experiment: &str, parameters: Parameters, results: Vec<ResolutionResult>, checks: Vec<Check>) -> Self {
        let passed = checks
            .iter()
            .chain(results.iter().flat_map(|r| &r.checks))
            .all(|c| c.passed);
        ExperimentReport {
            schema_version: SCHEMA_VERSION.to_string(),
            experiment: experiment.to_string(),
            parameters,
            results,
            checks,
            passed,
            environment: Environment::current(),
        }
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .chain(self.results.iter().flat_map(|r| &r.checks))
            .filter(|c| !c.passed)
            .collect()
    }
}

/// Hex SHA-256 of the measure's canonical JSON.
pub fn measure_hash(mu: &DiscreteMeasure) -> Result<String> {
    let bytes = serde_json::to_vec(mu)?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Coordinate -> (multiplicity -> atom count).
type Histograms = BTreeMap<usize, BTreeMap<usize, usize>>;

fn histograms(plan: &SparsePlan) -> Result<(Histograms, Vec<GraphDiagnostic>)> {
    let diags = (0..plan.n_marginals())
        .map(|j| graph_multiplicity(plan, j, MULTIPLICITY_MASS_TOL))
        .collect::<Result<Vec<_>>>()?;
    let hist = diags.iter().map(|g| (g.coordinate, g.histogram.clone())).collect();
    Ok((hist, diags))
}

/// Tuples (as points) in exactly one of the two plans' supports.
fn support_difference(a: &SparsePlan, b: &SparsePlan) -> Vec<Vec<Vec<f64>>> {
    let pa: Vec<Vec<Vec<f64>>> = a.atoms().iter().map(|x| a.tuple_points(x)).collect();
    let pb: Vec<Vec<Vec<f64>>> = b.atoms().iter().map(|x| b.tuple_points(x)).collect();
    let mut out: Vec<Vec<Vec<f64>>> = pa.iter().filter(|p| !pb.contains(p)).cloned().collect();
    out.extend(pb.iter().filter(|p| !pa.contains(p)).cloned());
    out
}

/// For each `n`: the LP on the three parts must return exactly the support of
/// the explicit optimum and survive cost jitter; the LP on three copies of
/// the full measure must symmetrize to the explicit symmetric optimum, which
/// is not induced by a map in any coordinate. Optionally sweeps the entropic
/// solver over `epsilons` on the parts instance.
pub fn reproduce_counterexample(d: usize, ns: &[usize], tol: f64, epsilons: &[f64]) -> Result<ExperimentReport> {
    if ns.is_empty() {
        return Err(Error::InvalidInput("no resolutions given".into()));
    }
    let spec = CostSpec::new(CostKind::Repulsive, 3, d)?;
    let mut results = Vec::with_capacity(ns.len());
    for &n in ns {
        let start = Instant::now();
        let (c, r, l) = build_counterexample_parts(d, n)?;
        let mu = Arc::new(build_counterexample_measure(d, n)?);
        let mut input_hashes = BTreeMap::new();
        input_hashes.insert("mu_c".to_string(), measure_hash(&c)?);
        input_hashes.insert("mu_r".to_string(), measure_hash(&r)?);
        input_hashes.insert("mu_l".to_string(), measure_hash(&l)?);
        input_hashes.insert("mu".to_string(), measure_hash(&mu)?);
        let parts = vec![Arc::new(c), Arc::new(r), Arc::new(l)];
        let mut checks = Vec::new();
        let mut failing_atoms = Vec::new();

        let lp = solve_lp(&parts, &spec)?;
        let g0 = gamma0(d, n)?;
        let g0_value = plan_cost(&spec, &g0)?;
        let same_support = lp.plan.support() == g0.support();
        if !same_support {
            failing_atoms.extend(support_difference(&lp.plan, &g0));
        }
        checks.push(Check::new("parts_support_equals_gamma0", same_support, String::new()));
        let diff = (lp.value - g0_value).abs();
        checks.push(Check::new(
            "parts_value_equals_gamma0",
            diff <= tol,
            format!("|lp - gamma0| = {diff:e}"),
        ));
        let cert = hyperplane_certificate(&g0, None)?;
        checks.push(Check::new(
            "gamma0_certified",
            cert.max_deviation == 0.0 && cert.gap == 0.0 && cert.k.iter().all(|x| x.abs() <= tol),
            format!("max_deviation {:e}, gap {:e}", cert.max_deviation, cert.gap),
        ));
        let jitter = perturbed_support_check(&parts, &spec, JITTER, 0)?;
        checks.push(Check::new(
            "perturbed_support_unchanged",
            jitter.unchanged,
            String::new(),
        ));

        let full = solve_lp(&[mu.clone(), mu.clone(), mu.clone()], &spec)?;
        let sym = symmetrize(&full.plan)?;
        let g1 = gamma1(d, n)?;
        let sym_ok = sym.approx_eq(&g1, tol);
        if !sym_ok {
            failing_atoms.extend(support_difference(&sym, &g1));
        }
        checks.push(Check::new("symmetrized_equals_gamma1", sym_ok, String::new()));
        let full_diff = (full.value - g0_value).abs();
        checks.push(Check::new(
            "symmetric_value_equals_gamma0",
            full_diff <= tol * (1.0 + g0_value.abs()),
            format!("|lp - gamma0| = {full_diff:e}"),
        ));
        let (hist, diags) = histograms(&sym)?;
        let (raw_hist, _) = histograms(&full.plan)?;
        checks.push(Check::new(
            "no_coordinate_graphical",
            diags.iter().all(|g| !g.is_graphical),
            diags
                .iter()
                .map(|g| format!("coordinate {}: max multiplicity {}", g.coordinate, g.max_multiplicity))
                .collect::<Vec<_>>()
                .join("; "),
        ));
        let zero_sums = sym.atoms().iter().all(|a| sym.tuple_sum(a).iter().all(|&s| s == 0.0));
        checks.push(Check::new("tuple_sums_zero", zero_sums, String::new()));

        let mut sinkhorn = Vec::with_capacity(epsilons.len());
        for &eps in epsilons {
            let report = match solve_sinkhorn(&parts, &spec, eps, SINKHORN_MAX_ITER, SINKHORN_TOL) {
                Ok(r) => r,
                Err(Error::Unconverged { partial, .. }) => *partial,
                Err(e) => return Err(e),
            };
            sinkhorn.push(SinkhornPoint {
                epsilon: eps,
                value: report.value,
                marginal_violation: report.residuals.marginal_violation,
                iterations: report.iterations,
                converged: report.residuals.converged,
                certificate_gap: optimality_gap(&report.plan, &spec)?,
            });
        }

        results.push(ResolutionResult {
            resolution: n,
            lp_value: lp.value,
            reference_value: Some(g0_value),
            symmetric_lp_value: Some(full.value),
            monge_value: None,
            gap: None,
            certificate: Some(cert),
            multiplicity_histograms: hist,
            raw_multiplicity_histograms: raw_hist,
            sinkhorn,
            checks,
            failing_atoms,
            input_hashes,
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
    }
    // with finer quadrature the value decreases toward its continuum limit
    let decreasing =
        results.windows(2).all(|w| w[1].lp_value <= w[0].lp_value + tol) || !ns.windows(2).all(|w| w[0] < w[1]);
    let checks = vec![Check::new(
        "lp_value_nonincreasing_in_n",
        decreasing,
        results
            .iter()
            .map(|r| format!("{}: {}", r.resolution, r.lp_value))
            .collect::<Vec<_>>()
            .join(", "),
    )];
    let params = Parameters {
        d,
        n_marginals: 3,
        cost: CostKind::Repulsive,
        resolutions: ns.to_vec(),
        tol: Some(tol),
        seed: None,
        mode: None,
        epsilons: epsilons.to_vec(),
    };
    Ok(ExperimentReport::finish(
        "reproduce_counterexample",
        params,
        results,
        checks,
    ))
}

/// For each total atom count `m` (divisible by 6): LP optimum versus the best
/// Monge tuple on the equal-mass atomization, with three marginals and the
/// repulsive cost. The inequality `monge >= lp` is checked; strictness is
/// reported in `gap`.
pub fn gap_experiment(ms: &[usize], mode: MongeMode, tol: f64) -> Result<ExperimentReport> {
    if ms.is_empty() {
        return Err(Error::InvalidInput("no atom counts given".into()));
    }
    if let Some(m) = ms.iter().find(|&&m| m == 0 || m % 6 != 0) {
        return Err(Error::InvalidInput(format!(
            "atom count {m} is not a positive multiple of 6"
        )));
    }
    let spec = CostSpec::new(CostKind::Repulsive, 3, 1)?;
    let mut results = Vec::with_capacity(ms.len());
    for &m in ms {
        let start = Instant::now();
        let mu = Arc::new(equal_mass_counterexample(m)?);
        let mut input_hashes = BTreeMap::new();
        input_hashes.insert("mu".to_string(), measure_hash(&mu)?);
        let lp = solve_lp(&[mu.clone(), mu.clone(), mu.clone()], &spec)?;
        let monge = monge_search(&mu, &spec, mode)?;
        let gap = monge.value - lp.value;
        let slack = tol * (1.0 + lp.value.abs());
        let checks = vec![Check::new(
            "monge_at_least_lp",
            gap >= -slack,
            format!("monge - lp = {gap:e}"),
        )];
        results.push(ResolutionResult {
            resolution: m,
            lp_value: lp.value,
            reference_value: None,
            symmetric_lp_value: None,
            monge_value: Some(monge.value),
            gap: Some(gap),
            certificate: Some(hyperplane_certificate(&lp.plan, None)?),
            multiplicity_histograms: histograms(&lp.plan)?.0,
            raw_multiplicity_histograms: BTreeMap::new(),
            sinkhorn: Vec::new(),
            checks,
            failing_atoms: Vec::new(),
            input_hashes,
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
    }
    let seed = match mode {
        MongeMode::Local { seed, .. } => Some(seed),
        MongeMode::Exhaustive => None,
    };
    let params = Parameters {
        d: 1,
        n_marginals: 3,
        cost: CostKind::Repulsive,
        resolutions: ms.to_vec(),
        tol: Some(tol),
        seed,
        mode: Some(mode),
        epsilons: Vec::new(),
    };
    Ok(ExperimentReport::finish("monge_gap", params, results, Vec::new()))
}
