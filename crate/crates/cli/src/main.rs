//! `mmot`: generate measures, construct and solve multi-marginal transport
//! problems with harmonic costs, certify plans, and run the counterexample
//! experiments.
//!
//! Exit codes: 0 success, 1 domain or assertion failure, 2 I/O failure.

mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmot_core::constructors::{
    anti_monotone_plan, fat_plan, fat_plan_summary, fractal_plan, gamma0, gamma1, reflection_plan,
};
use mmot_core::experiments::{gap_experiment, measure_hash, reproduce_counterexample, ExperimentReport};
use mmot_core::measures::{
    build_counterexample_measure, build_counterexample_parts, discretize_uniform_box, equal_mass_counterexample,
    AxisBox,
};
use mmot_core::plans::PlanFile;
use mmot_core::solvers::DEFAULT_RESTARTS;
use mmot_core::{
    hyperplane_certificate, monge_search, solve_lp, solve_sinkhorn, CostKind, CostSpec, DiscreteMeasure, MongeMode,
    SolveReport, SparsePlan,
};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use output::{emit, Format};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mmot_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// Ran to completion but an assertion did not hold.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        use mmot_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::Core(E::Io(_)) => 2,
            // Malformed files are I/O failures; well-formed files with bad
            // content are domain failures.
            CliError::Core(E::Json(e)) if !e.is_data() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mmot",
    version,
    about = "Multi-marginal optimal transport with harmonic costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a discrete measure (or the three counterexample parts).
    Gen(GenArgs),
    /// Build one of the explicit plans and certify it.
    Construct(ConstructArgs),
    /// Solve the Kantorovich problem on measure files.
    Solve(SolveArgs),
    /// Run the hyperplane certificate on a plan file.
    Certify(CertifyArgs),
    /// Reproduce the counterexample: LP optimum, symmetrization, non-graphicality.
    Reproduce(ReproduceArgs),
    /// Compare the LP optimum with the best Monge tuple on equal-mass atomizations.
    Gap(GapArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Attractive,
    Repulsive,
    SumSquare,
}

impl From<Cost> for CostKind {
    fn from(c: Cost) -> Self {
        match c {
            Cost::Attractive => CostKind::Attractive,
            Cost::Repulsive => CostKind::Repulsive,
            Cost::SumSquare => CostKind::SumSquare,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Counterexample,
    CounterexampleParts,
    UniformBox,
    EqualMass,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Atoms per axis per block.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Box for `uniform-box`, e.g. `0,1x0,1`. Defaults to the unit cube.
    #[arg(long = "box")]
    domain: Option<String>,
    /// Total atom count for `equal-mass`.
    #[arg(long)]
    m: Option<usize>,
    /// Output file; a directory for `counterexample-parts`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Construction {
    Gamma0,
    Gamma1,
    AntiMonotone,
    Fractal,
    Reflection,
    Fat,
}

#[derive(Args)]
struct ConstructArgs {
    #[arg(value_enum)]
    name: Construction,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Number of marginals for `fractal` (the digit base) and `reflection`.
    #[arg(long = "N")]
    n_marginals: Option<usize>,
    /// Base-N digits kept by the fractal map.
    #[arg(long = "K", default_value_t = 8)]
    digits: u32,
    /// Grid points per axis for `fractal`.
    #[arg(long, default_value_t = 81)]
    samples: usize,
    /// Quadrature cells per axis for `fat`.
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Histogram bins for the `fat` uniformity check.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Measure file(s): two for `anti-monotone`, one for `reflection`.
    #[arg(long)]
    input: Vec<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    /// Plan file. Without it the plan is embedded in the summary on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Certificate file; defaults to `<out stem>.certificate.json`.
    #[arg(long)]
    cert_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lp,
    Sinkhorn,
    Monge,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exhaustive,
    Local,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, value_enum, default_value = "exhaustive")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
}

impl SearchArgs {
    fn mode(&self) -> MongeMode {
        match self.mode {
            Mode::Exhaustive => MongeMode::Exhaustive,
            Mode::Local => MongeMode::Local {
                restarts: self.restarts,
                seed: self.seed,
            },
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Measure files, one per marginal, or a single file replicated `--N` times.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long = "N")]
    n_marginals: Option<usize>,
    #[arg(long, value_enum, default_value = "repulsive")]
    cost: Cost,
    #[arg(long, value_enum, default_value = "lp")]
    method: Method,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Marginal tolerance for `sinkhorn`.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct CertifyArgs {
    /// Plan file; marginal paths resolve relative to its directory.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Atoms per axis per block, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Entropic sweep on the parts instance, comma separated.
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Total atom counts, comma separated, each a multiple of 6.
    #[arg(long, value_delimiter = ',', default_value = "6")]
    m: Vec<usize>,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Construct(a) => cmd_construct(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Reproduce(a) => cmd_reproduce(a),
        Command::Gap(a) => cmd_gap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(mmot_core::Error::from)?)
}

fn measure_text(mu: &DiscreteMeasure, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => output::json(mu),
        Format::Csv => output::measure_csv(mu),
    }
}

fn parse_box(spec: &str) -> Result<AxisBox, CliError> {
    let bad = || mmot_core::Error::InvalidDomain(format!("cannot parse box {spec:?}; expected lo,hi x lo,hi ..."));
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for side in spec.split('x') {
        let (a, b) = side.split_once(',').ok_or_else(bad)?;
        lo.push(a.trim().parse::<f64>().map_err(|_| bad())?);
        hi.push(b.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok(AxisBox::new(lo, hi)?)
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let ext = match a.format {
        Format::Json => "json",
        Format::Csv => "csv",
    };
    let mu = match a.preset {
        Preset::CounterexampleParts => {
            let (c, r, l) = build_counterexample_parts(a.d, a.n)?;
            let dir = a.out.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            let mut files = Vec::new();
            for (name, mu) in [("mu_c", &c), ("mu_r", &r), ("mu_l", &l)] {
                let path = dir.join(format!("{name}.{ext}"));
                emit(Some(&path), &measure_text(mu, a.format)?)?;
                files.push(path.display().to_string());
            }
            return emit(None, &output::json(&json!({ "files": files }))?);
        }
        Preset::Counterexample => build_counterexample_measure(a.d, a.n)?,
        Preset::UniformBox => {
            let domain = match &a.domain {
                Some(s) => parse_box(s)?,
                None => AxisBox::cube(0.0, 1.0, a.d),
            };
            if domain.dim() != a.d {
                return Err(mmot_core::Error::InvalidDomain(format!(
                    "box has dimension {} but --d is {}",
                    domain.dim(),
                    a.d
                ))
                .into());
            }
            discretize_uniform_box(&domain, a.n, 1.0)?
        }
        Preset::EqualMass => {
            if a.d != 1 {
                return Err(mmot_core::Error::Unsupported("equal-mass atomization is one-dimensional".into()).into());
            }
            let m =
                a.m.ok_or_else(|| mmot_core::Error::InvalidInput("equal-mass needs --m".into()))?;
            equal_mass_counterexample(m)?
        }
    };
    emit(a.out.as_deref(), &measure_text(&mu, a.format)?)
}

fn need_inputs(inputs: &[PathBuf], count: usize, what: &str) -> Result<Vec<Arc<DiscreteMeasure>>, CliError> {
    if inputs.len() != count {
        return Err(mmot_core::Error::InvalidInput(format!(
            "{what} needs {count} --input file(s), got {}",
            inputs.len()
        ))
        .into());
    }
    inputs.iter().map(|p| read_measure(p).map(Arc::new)).collect()
}

fn cmd_construct(a: ConstructArgs) -> Result<(), CliError> {
    let (name, plan, details) = match a.name {
        Construction::Gamma0 => ("gamma0", gamma0(a.d, a.n)?, json!({ "d": a.d, "n": a.n })),
        Construction::Gamma1 => ("gamma1", gamma1(a.d, a.n)?, json!({ "d": a.d, "n": a.n })),
        Construction::AntiMonotone => {
            let ms = need_inputs(&a.input, 2, "anti-monotone")?;
            ("anti-monotone", anti_monotone_plan(&ms[0], &ms[1])?, json!({}))
        }
        Construction::Reflection => {
            let ms = need_inputs(&a.input, 1, "reflection")?;
            let n = a.n_marginals.unwrap_or(2);
            ("reflection", reflection_plan(&ms[0], n)?, json!({ "N": n }))
        }
        Construction::Fractal => {
            let base = a.n_marginals.unwrap_or(3);
            let base =
                u32::try_from(base).map_err(|_| mmot_core::Error::InvalidInput(format!("N = {base} is too large")))?;
            let f = fractal_plan(base, a.d, a.samples, a.digits)?;
            let details = json!({
                "N": base,
                "K": a.digits,
                "d": a.d,
                "samples": a.samples,
                "max_deviation": f.max_deviation,
                "bound": f.bound,
                "within_bound": f.max_deviation <= f.bound,
            });
            ("fractal", f.plan, details)
        }
        Construction::Fat => {
            let plan = fat_plan(a.m)?;
            let summary = fat_plan_summary(&plan, a.m, a.bins)?;
            let details = serde_json::to_value(&summary).map_err(mmot_core::Error::from)?;
            ("fat", plan, details)
        }
    };
    let certificate = hyperplane_certificate(&plan, a.tol)?;
    let mut summary = json!({
        "construction": name,
        "N": plan.n_marginals(),
        "d": plan.dim(),
        "atoms": plan.len(),
        "certificate": certificate,
        "details": details,
    });
    match &a.out {
        Some(out) => {
            let text = match a.format {
                Format::Json => output::json(&plan)?,
                Format::Csv => output::plan_csv(&plan)?,
            };
            emit(Some(out), &text)?;
            let cert_path = a
                .cert_out
                .clone()
                .unwrap_or_else(|| output::sibling(out, ".certificate.json"));
            emit(Some(&cert_path), &output::json(&certificate)?)?;
            summary["plan_file"] = json!(out.display().to_string());
            summary["certificate_file"] = json!(cert_path.display().to_string());
        }
        None => {
            if let Some(cert_path) = &a.cert_out {
                emit(Some(cert_path), &output::json(&certificate)?)?;
            }
            summary["plan"] = serde_json::to_value(&plan).map_err(mmot_core::Error::from)?;
        }
    }
    emit(None, &output::json(&summary)?)
}

#[derive(Serialize)]
struct SolveParameters {
    #[serde(rename = "N")]
    n_marginals: usize,
    d: usize,
    cost: CostKind,
    inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<MongeMode>,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    #[serde(flatten)]
    report: &'a SolveReport,
    parameters: SolveParameters,
    input_hashes: BTreeMap<String, String>,
}

fn cmd_solve(a: SolveArgs) -> Result<(), CliError> {
    let loaded: Vec<Arc<DiscreteMeasure>> = a
        .input
        .iter()
        .map(|p| read_measure(p).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut input_hashes = BTreeMap::new();
    for (p, mu) in a.input.iter().zip(&loaded) {
        input_hashes.insert(p.display().to_string(), measure_hash(mu)?);
    }
    let n = match (a.n_marginals, loaded.len()) {
        (Some(n), 1) => n,
        (None, 1) => {
            return Err(mmot_core::Error::InvalidInput("a single --input needs --N".into()).into());
        }
        (Some(n), k) if n != k => {
            return Err(mmot_core::Error::InvalidInput(format!("--N {n} but {k} input files")).into());
        }
        (_, k) => k,
    };
    let measures: Vec<Arc<DiscreteMeasure>> = if loaded.len() == 1 {
        vec![loaded[0].clone(); n]
    } else {
        loaded
    };
    let d = measures[0].dim();
    let spec = CostSpec::new(a.cost.into(), n, d)?;
    let mut parameters = SolveParameters {
        n_marginals: n,
        d,
        cost: spec.kind,
        inputs: a.input.iter().map(|p| p.display().to_string()).collect(),
        epsilon: None,
        tol: None,
        max_iter: None,
        mode: None,
    };
    let result = match a.method {
        Method::Lp => solve_lp(&measures, &spec),
        Method::Sinkhorn => {
            parameters.epsilon = Some(a.epsilon);
            parameters.tol = Some(a.tol);
            parameters.max_iter = Some(a.max_iter);
            solve_sinkhorn(&measures, &spec, a.epsilon, a.max_iter, a.tol)
        }
        Method::Monge => {
            if measures.iter().any(|m| m != &measures[0]) {
                return Err(mmot_core::Error::NotExchangeable("Monge search needs identical marginals".into()).into());
            }
            let mode = a.search.mode();
            parameters.mode = Some(mode);
            monge_search(&measures[0], &spec, mode)
        }
    };
    let (report, failure) = match result {
        Ok(r) => (r, None),
        Err(mmot_core::Error::Unconverged {
            iterations,
            violation,
            partial,
        }) => (
            *partial,
            Some(CliError::Failed(format!(
                "solver did not converge in {iterations} iterations (marginal violation {violation:e}); partial report written"
            ))),
        ),
        Err(e) => return Err(e.into()),
    };
    let text = match a.format {
        Format::Json => output::json(&SolveOutput {
            report: &report,
            parameters,
            input_hashes,
        })?,
        Format::Csv => output::plan_csv(&report.plan)?,
    };
    emit(a.out.as_deref(), &text)?;
    failure.map_or(Ok(()), Err)
}

fn cmd_certify(a: CertifyArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.plan).map_err(|e| CliError::io(&a.plan, e))?;
    let file: PlanFile = serde_json::from_str(&text).map_err(mmot_core::Error::from)?;
    let base = a.plan.parent().unwrap_or(Path::new("."));
    let plan: SparsePlan = file.into_plan(base)?;
    let certificate = hyperplane_certificate(&plan, a.tol)?;
    emit(a.out.as_deref(), &output::json(&certificate)?)
}

fn report_text(report: &ExperimentReport, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => output::json(report),
        Format::Csv => output::report_csv(report),
    }
}

/// Writes the report, then fails if any check failed.
fn finish_report(report: &ExperimentReport, out: Option<&Path>, format: Format) -> Result<(), CliError> {
    emit(out, &report_text(report, format)?)?;
    if report.passed {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failed_checks()
        .iter()
        .map(|c| {
            if c.detail.is_empty() {
                c.name.clone()
            } else {
                format!("{} ({})", c.name, c.detail)
            }
        })
        .collect();
    Err(CliError::Failed(format!("checks failed: {}", failed.join("; "))))
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<(), CliError> {
    let report = reproduce_counterexample(a.d, &a.n, a.tol, &a.epsilon)?;
    finish_report(&report, a.out.as_deref(), a.format)
}

fn cmd_gap(a: GapArgs) -> Result<(), CliError> {
    if a.d != 1 {
        return Err(mmot_core::Error::Unsupported("the gap experiment is one-dimensional".into()).into());
    }
    let report = gap_experiment(&a.m, a.search.mode(), a.tol)?;
    finish_report(&report, a.out.as_deref(), a.format)
}
