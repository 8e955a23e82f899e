//! Harmonic cost families on `N`-tuples of points in `R^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{moments, DiscreteMeasure};

/// Default upper bound on the number of entries of a materialized tensor.
pub const DEFAULT_TENSOR_CAP: u128 = 10_000_000;

/// Environment variable overriding [`DEFAULT_TENSOR_CAP`].
pub const TENSOR_CAP_ENV: &str = "MMOT_TENSOR_CAP";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `sum_{i<j} |x_i - x_j|^2`
    Attractive,
    /// `-sum_{i<j} |x_i - x_j|^2`
    Repulsive,
    /// `|x_1 + ... + x_N|^2`
    SumSquare,
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attractive" => Ok(CostKind::Attractive),
            "repulsive" => Ok(CostKind::Repulsive),
            "sum-square" | "sum_square" => Ok(CostKind::SumSquare),
            other => Err(Error::InvalidInput(format!("unknown cost {other:?}"))),
        }
    }
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CostKind::Attractive => "attractive",
            CostKind::Repulsive => "repulsive",
            CostKind::SumSquare => "sum-square",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: CostKind,
    pub n_marginals: usize,
    pub dim: usize,
}

impl CostSpec {
    pub fn new(kind: CostKind, n_marginals: usize, dim: usize) -> Result<Self> {
        if n_marginals < 2 || dim < 1 {
            return Err(Error::InvalidInput(format!(
                "cost needs N >= 2 and d >= 1, got N={n_marginals}, d={dim}"
            )));
        }
        Ok(CostSpec { kind, n_marginals, dim })
    }

    /// Cost of a tuple stored as `N` consecutive `d`-vectors. No shape check.
    #[inline]
    pub fn eval_flat(&self, tuple: &[f64]) -> f64 {
        let d = self.dim;
        let n = self.n_marginals;
        match self.kind {
            CostKind::SumSquare => {
                let mut total = 0.0;
                for a in 0..d {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += tuple[i * d + a];
                    }
                    total += s * s;
                }
                total
            }
            CostKind::Attractive | CostKind::Repulsive => {
                let mut total = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        for a in 0..d {
                            let diff = tuple[i * d + a] - tuple[j * d + a];
                            total += diff * diff;
                        }
                    }
                }
                if self.kind == CostKind::Repulsive {
                    -total
                } else {
                    total
                }
            }
        }
    }
}

/// Cost of one `N x d` tuple given as `N` points.
pub fn eval_cost(spec: &CostSpec, tuple: &[Vec<f64>]) -> Result<f64> {
    if tuple.len() != spec.n_marginals || tuple.iter().any(|p| p.len() != spec.dim) {
        return Err(Error::InvalidInput(format!(
            "tuple shape does not match N={}, d={}",
            spec.n_marginals, spec.dim
        )));
    }
    Ok(spec.eval_flat(&tuple.concat()))
}

/// Tensor cap from `MMOT_TENSOR_CAP`, falling back to the default.
pub fn tensor_cap() -> u128 {
    std::env::var(TENSOR_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_TENSOR_CAP)
}

/// Dense row-major tensor of costs over atom index tuples.
#[derive(Clone, Debug)]
pub struct CostTensor {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<f64>,
}

impl CostTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for (o, s) in out.iter_mut().zip(&self.strides) {
            *o = flat / s;
            flat %= s;
        }
    }

    pub(crate) fn from_data(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let strides = row_major_strides(&shape);
        CostTensor { shape, strides, data }
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Number of entries of the tensor over `measures`, or `TensorTooLarge`.
pub fn check_tensor_size(measures: &[&DiscreteMeasure], cap: u128) -> Result<usize> {
    let entries = measures
        .iter()
        .fold(1u128, |acc, m| acc.saturating_mul(m.len() as u128));
    if entries > cap {
        return Err(Error::TensorTooLarge { entries, cap });
    }
    Ok(entries as usize)
}

/// Materializes `c(x_{i_1}, ..., x_{i_N})` for all atom index tuples.
pub fn cost_tensor(spec: &CostSpec, measures: &[&DiscreteMeasure], cap: u128) -> Result<CostTensor> {
    check_shape(spec, measures)?;
    let entries = check_tensor_size(measures, cap)?;
    let shape: Vec<usize> = measures.iter().map(|m| m.len()).collect();
    let d = spec.dim;
    let n = spec.n_marginals;
    let mut data = Vec::with_capacity(entries);
    let mut idx = vec![0usize; n];
    let mut tuple = vec![0.0; n * d];
    for (j, m) in measures.iter().enumerate() {
        tuple[j * d..(j + 1) * d].copy_from_slice(m.point(0));
    }
    for _ in 0..entries {
        data.push(spec.eval_flat(&tuple));
        // odometer over the last axis first
        for j in (0..n).rev() {
            idx[j] += 1;
            if idx[j] < shape[j] {
                tuple[j * d..(j + 1) * d].copy_from_slice(measures[j].point(idx[j]));
                break;
            }
            idx[j] = 0;
            tuple[j * d..(j + 1) * d].copy_from_slice(measures[j].point(0));
        }
    }
    Ok(CostTensor::from_data(shape, data))
}

pub(crate) fn check_shape(spec: &CostSpec, measures: &[&DiscreteMeasure]) -> Result<()> {
    if measures.len() != spec.n_marginals {
        return Err(Error::InvalidInput(format!(
            "{} marginals given for a cost with N={}",
            measures.len(),
            spec.n_marginals
        )));
    }
    if let Some(m) = measures.iter().find(|m| m.dim() != spec.dim) {
        return Err(Error::InvalidInput(format!(
            "marginal of dimension {} for a cost with d={}",
            m.dim(),
            spec.dim
        )));
    }
    if measures.iter().any(|m| m.is_empty()) {
        return Err(Error::InvalidInput("empty marginal".into()));
    }
    Ok(())
}

/// Plan-independent offset between the repulsive and the sum-square costs:
/// `N * sum_j M2(mu_j)`, so that for every coupling
/// `cost_repulsive = cost_sum_square - offset`.
///
/// Follows from `sum_{i<j} |x_i - x_j|^2 = N sum_i |x_i|^2 - |sum_i x_i|^2`.
pub fn decompose_constant(spec: &CostSpec, measures: &[&DiscreteMeasure]) -> Result<f64> {
    if spec.kind != CostKind::Repulsive {
        return Err(Error::Unsupported(format!(
            "decomposition offset is defined for the repulsive cost, not {}",
            spec.kind
        )));
    }
    check_shape(spec, measures)?;
    let m2: f64 = measures.iter().map(|m| moments(m).second_moment).sum();
    Ok(spec.n_marginals as f64 * m2)
}
