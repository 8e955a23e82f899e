//! Python bindings. Measures and plans are wrapped; reports and
//! certificates come back as plain dicts with the same layout as the JSON
//! files the CLI writes.

use std::sync::Arc;

use mmot_core::constructors;
use mmot_core::experiments;
use mmot_core::measures::{self, AxisBox};
use mmot_core::plans::plan_cost;
use mmot_core::solvers::{self, DEFAULT_RESTARTS};
use mmot_core::{CostKind, CostSpec, DiscreteMeasure, Error, MongeMode, SolveReport, SparsePlan};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (Error::Unconverged { .. } | Error::SolverFailure(_)) => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    to_py(Error::from(e))
}

/// Serializes through JSON into plain Python objects.
fn to_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn cost_kind(name: &str) -> PyResult<CostKind> {
    name.parse().map_err(to_py)
}

fn mode(kind: &str, restarts: usize, seed: u64) -> PyResult<MongeMode> {
    match kind {
        "exhaustive" => Ok(MongeMode::Exhaustive),
        "local" => Ok(MongeMode::Local { restarts, seed }),
        other => Err(PyValueError::new_err(format!("unknown search mode {other:?}"))),
    }
}

#[pyclass(name = "Measure", module = "mmot", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure {
    inner: Arc<DiscreteMeasure>,
}

#[pymethods]
impl PyMeasure {
    #[new]
    fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| PyValueError::new_err("a measure needs at least one atom"))?;
        let mu = DiscreteMeasure::new(dim, points, weights).map_err(to_py)?;
        Ok(PyMeasure { inner: Arc::new(mu) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let mu: DiscreteMeasure = serde_json::from_str(text).map_err(json_err)?;
        Ok(PyMeasure { inner: Arc::new(mu) })
    }

    /// The five-block measure `(mu_L + mu_C + mu_R) / 3`.
    #[staticmethod]
    fn counterexample(d: usize, n: usize) -> PyResult<Self> {
        let mu = measures::build_counterexample_measure(d, n).map_err(to_py)?;
        Ok(PyMeasure { inner: Arc::new(mu) })
    }

    /// `(mu_C, mu_R, mu_L)`.
    #[staticmethod]
    fn counterexample_parts(d: usize, n: usize) -> PyResult<(Self, Self, Self)> {
        let (c, r, l) = measures::build_counterexample_parts(d, n).map_err(to_py)?;
        let wrap = |mu| PyMeasure { inner: Arc::new(mu) };
        Ok((wrap(c), wrap(r), wrap(l)))
    }

    /// One-dimensional equal-mass atomization with `m` atoms.
    #[staticmethod]
    fn equal_mass(m: usize) -> PyResult<Self> {
        let mu = measures::equal_mass_counterexample(m).map_err(to_py)?;
        Ok(PyMeasure { inner: Arc::new(mu) })
    }

    #[staticmethod]
    fn uniform_box(lo: Vec<f64>, hi: Vec<f64>, n: usize) -> PyResult<Self> {
        let domain = AxisBox::new(lo, hi).map_err(to_py)?;
        let mu = measures::discretize_uniform_box(&domain, n, 1.0).map_err(to_py)?;
        Ok(PyMeasure { inner: Arc::new(mu) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&*self.inner).map_err(json_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Measure(dim={}, atoms={})", self.inner.dim(), self.inner.len())
    }
}

#[pyclass(name = "Plan", module = "mmot", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPlan {
    inner: SparsePlan,
}

#[pymethods]
impl PyPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let plan: SparsePlan = serde_json::from_str(text).map_err(json_err)?;
        Ok(PyPlan { inner: plan })
    }

    #[getter]
    fn n_marginals(&self) -> usize {
        self.inner.n_marginals()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn marginals(&self) -> Vec<PyMeasure> {
        self.inner
            .marginals()
            .iter()
            .map(|m| PyMeasure { inner: m.clone() })
            .collect()
    }

    /// `(indices, mass)` per support atom.
    fn atoms(&self) -> Vec<(Vec<usize>, f64)> {
        self.inner.atoms().iter().map(|a| (a.idx.clone(), a.mass)).collect()
    }

    /// Point tuples of the support atoms.
    fn tuples(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.atoms().iter().map(|a| self.inner.tuple_points(a)).collect()
    }

    #[pyo3(signature = (cost = "repulsive"))]
    fn cost(&self, cost: &str) -> PyResult<f64> {
        let spec = CostSpec::new(cost_kind(cost)?, self.inner.n_marginals(), self.inner.dim()).map_err(to_py)?;
        plan_cost(&spec, &self.inner).map_err(to_py)
    }

    fn symmetrize(&self) -> PyResult<Self> {
        Ok(PyPlan {
            inner: mmot_core::plans::symmetrize(&self.inner).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (tol = None))]
    fn certificate(&self, py: Python<'_>, tol: Option<f64>) -> PyResult<Py<PyAny>> {
        let cert = mmot_core::hyperplane_certificate(&self.inner, tol).map_err(to_py)?;
        to_object(py, &cert)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Plan(N={}, dim={}, atoms={})",
            self.inner.n_marginals(),
            self.inner.dim(),
            self.inner.len()
        )
    }
}

#[pyclass(name = "SolveReport", module = "mmot", frozen, skip_from_py_object)]
struct PySolveReport {
    inner: SolveReport,
}

#[pymethods]
impl PySolveReport {
    #[getter]
    fn value(&self) -> f64 {
        self.inner.value
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.residuals.converged
    }

    #[getter]
    fn plan(&self) -> PyPlan {
        PyPlan {
            inner: self.inner.plan.clone(),
        }
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveReport(method={:?}, value={}, iterations={})",
            self.inner.method, self.inner.value, self.inner.iterations
        )
    }
}

fn arcs(measures: &[PyRef<'_, PyMeasure>]) -> PyResult<Vec<Arc<DiscreteMeasure>>> {
    if measures.is_empty() {
        return Err(PyValueError::new_err("need at least one measure"));
    }
    Ok(measures.iter().map(|m| m.inner.clone()).collect())
}

fn spec_for(measures: &[Arc<DiscreteMeasure>], cost: &str) -> PyResult<CostSpec> {
    CostSpec::new(cost_kind(cost)?, measures.len(), measures[0].dim()).map_err(to_py)
}

/// Exact optimum by the simplex method.
#[pyfunction]
#[pyo3(signature = (measures, cost = "repulsive"))]
fn solve_lp(py: Python<'_>, measures: Vec<PyRef<'_, PyMeasure>>, cost: &str) -> PyResult<PySolveReport> {
    let ms = arcs(&measures)?;
    let spec = spec_for(&ms, cost)?;
    let report = py.detach(|| solvers::solve_lp(&ms, &spec)).map_err(to_py)?;
    Ok(PySolveReport { inner: report })
}

/// Entropic optimum. Raises RuntimeError if the marginal tolerance is not met.
#[pyfunction]
#[pyo3(signature = (measures, cost = "repulsive", epsilon = 0.1, max_iter = 200_000, tol = 1e-9))]
fn solve_sinkhorn(
    py: Python<'_>,
    measures: Vec<PyRef<'_, PyMeasure>>,
    cost: &str,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<PySolveReport> {
    let ms = arcs(&measures)?;
    let spec = spec_for(&ms, cost)?;
    let report = py
        .detach(|| solvers::solve_sinkhorn(&ms, &spec, epsilon, max_iter, tol))
        .map_err(to_py)?;
    Ok(PySolveReport { inner: report })
}

/// Best plan induced by `N - 1` permutations of an equally weighted measure.
#[pyfunction]
#[pyo3(signature = (measure, n, cost = "repulsive", mode = "exhaustive", restarts = DEFAULT_RESTARTS, seed = 0))]
fn monge_search(
    py: Python<'_>,
    measure: PyRef<'_, PyMeasure>,
    n: usize,
    cost: &str,
    mode: &str,
    restarts: usize,
    seed: u64,
) -> PyResult<PySolveReport> {
    let spec = CostSpec::new(cost_kind(cost)?, n, measure.inner.dim()).map_err(to_py)?;
    let mode = self::mode(mode, restarts, seed)?;
    let mu = measure.inner.clone();
    let report = py.detach(|| solvers::monge_search(&mu, &spec, mode)).map_err(to_py)?;
    Ok(PySolveReport { inner: report })
}

#[pyfunction]
#[pyo3(signature = (plan, tol = None))]
fn hyperplane_certificate(py: Python<'_>, plan: PyRef<'_, PyPlan>, tol: Option<f64>) -> PyResult<Py<PyAny>> {
    plan.certificate(py, tol)
}

#[pyfunction]
fn gamma0(d: usize, n: usize) -> PyResult<PyPlan> {
    Ok(PyPlan {
        inner: constructors::gamma0(d, n).map_err(to_py)?,
    })
}

#[pyfunction]
fn gamma1(d: usize, n: usize) -> PyResult<PyPlan> {
    Ok(PyPlan {
        inner: constructors::gamma1(d, n).map_err(to_py)?,
    })
}

#[pyfunction]
fn anti_monotone_plan(a: PyRef<'_, PyMeasure>, b: PyRef<'_, PyMeasure>) -> PyResult<PyPlan> {
    Ok(PyPlan {
        inner: constructors::anti_monotone_plan(&a.inner, &b.inner).map_err(to_py)?,
    })
}

#[pyfunction]
fn reflection_plan(measure: PyRef<'_, PyMeasure>, n: usize) -> PyResult<PyPlan> {
    Ok(PyPlan {
        inner: constructors::reflection_plan(&measure.inner, n).map_err(to_py)?,
    })
}

/// `(plan, max_deviation, bound)`.
#[pyfunction]
#[pyo3(signature = (n, k, samples, d = 1))]
fn fractal_plan(n: u32, k: u32, samples: usize, d: usize) -> PyResult<(PyPlan, f64, f64)> {
    let f = constructors::fractal_plan(n, d, samples, k).map_err(to_py)?;
    Ok((PyPlan { inner: f.plan }, f.max_deviation, f.bound))
}

#[pyfunction]
fn fat_plan(m: usize) -> PyResult<PyPlan> {
    Ok(PyPlan {
        inner: constructors::fat_plan(m).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (d = 1, ns = vec![1, 2, 4], tol = 1e-9, epsilons = vec![]))]
fn reproduce_counterexample(
    py: Python<'_>,
    d: usize,
    ns: Vec<usize>,
    tol: f64,
    epsilons: Vec<f64>,
) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| experiments::reproduce_counterexample(d, &ns, tol, &epsilons))
        .map_err(to_py)?;
    to_object(py, &report)
}

#[pyfunction]
#[pyo3(signature = (ms = vec![6], mode = "exhaustive", restarts = DEFAULT_RESTARTS, seed = 0, tol = 1e-9))]
fn gap_experiment(
    py: Python<'_>,
    ms: Vec<usize>,
    mode: &str,
    restarts: usize,
    seed: u64,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let mode = self::mode(mode, restarts, seed)?;
    let report = py
        .detach(|| experiments::gap_experiment(&ms, mode, tol))
        .map_err(to_py)?;
    to_object(py, &report)
}

#[pymodule]
fn mmot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PySolveReport>()?;
    m.add_function(wrap_pyfunction!(solve_lp, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(monge_search, m)?)?;
    m.add_function(wrap_pyfunction!(hyperplane_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(gamma0, m)?)?;
    m.add_function(wrap_pyfunction!(gamma1, m)?)?;
    m.add_function(wrap_pyfunction!(anti_monotone_plan, m)?)?;
    m.add_function(wrap_pyfunction!(reflection_plan, m)?)?;
    m.add_function(wrap_pyfunction!(fractal_plan, m)?)?;
    m.add_function(wrap_pyfunction!(fat_plan, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce_counterexample, m)?)?;
    m.add_function(wrap_pyfunction!(gap_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SCHEMA_VERSION", experiments::SCHEMA_VERSION)?;
    Ok(())
}
