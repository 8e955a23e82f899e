//! Explicit optimal plans and maps for the harmonic costs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{
    build_counterexample_measure, build_counterexample_parts, product_grid, DiscreteMeasure, PointKey,
};
use crate::plans::{northwest_corner_cells, symmetrize_atoms, PlanAtom, SparsePlan};

/// `N - 1` atom permutations of a common equally weighted base measure,
/// representing the plan `(id, T_1, ..., T_{N-1})_# mu`.
#[derive(Clone, Debug)]
pub struct MongeTuple {
    pub base: Arc<DiscreteMeasure>,
    pub maps: Vec<Vec<usize>>,
}

impl MongeTuple {
    pub fn new(base: Arc<DiscreteMeasure>, maps: Vec<Vec<usize>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidInput("need at least one map".into()));
        }
        let m = base.len();
        for (t, map) in maps.iter().enumerate() {
            let mut seen = vec![false; m];
            if map.len() != m || map.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::InvalidInput(format!(
                    "map {t} is not a permutation of {m} atoms"
                )));
            }
            if map.iter().enumerate().any(|(i, &j)| base.weight(i) != base.weight(j)) {
                return Err(Error::InvalidInput(format!(
                    "map {t} does not preserve the base measure"
                )));
            }
        }
        Ok(MongeTuple { base, maps })
    }

    pub fn n_marginals(&self) -> usize {
        self.maps.len() + 1
    }

    pub fn to_plan(&self) -> Result<SparsePlan> {
        let atoms = (0..self.base.len())
            .map(|i| {
                let mut idx = Vec::with_capacity(self.n_marginals());
                idx.push(i);
                idx.extend(self.maps.iter().map(|t| t[i]));
                PlanAtom {
                    idx,
                    mass: self.base.weight(i),
                }
            })
            .collect();
        SparsePlan::new(vec![self.base.clone(); self.n_marginals()], atoms)
    }
}

/// One-dimensional anti-monotone coupling: atoms of the first measure in
/// ascending order matched against atoms of the second in descending order.
fn anti_monotone_1d(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Vec<(Vec<usize>, f64)> {
    let mut up: Vec<usize> = (0..a.len()).collect();
    up.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut down: Vec<usize> = (0..b.len()).collect();
    down.sort_by(|&i, &j| b[j].total_cmp(&b[i]));
    northwest_corner_cells(&[wa, wb], &[up, down])
        .into_iter()
        .filter(|(_, m)| *m > 0.0)
        .collect()
}

/// Per-axis factorization of a product measure: sorted axis values and the
/// axis marginals.
struct ProductFactor {
    values: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

fn factorize(mu: &DiscreteMeasure) -> Option<ProductFactor> {
    let d = mu.dim();
    let mut values = Vec::with_capacity(d);
    let mut weights = Vec::with_capacity(d);
    for a in 0..d {
        let mut axis: BTreeMap<PointKey, (f64, f64)> = BTreeMap::new();
        for (p, w) in mu.points().zip(mu.weights()) {
            axis.entry(PointKey::new(&[p[a]])).or_insert((p[a], 0.0)).1 += w;
        }
        let mut entries: Vec<(f64, f64)> = axis.into_values().collect();
        entries.sort_by(|x, y| x.0.total_cmp(&y.0));
        values.push(entries.iter().map(|e| e.0).collect::<Vec<_>>());
        weights.push(entries.iter().map(|e| e.1).collect::<Vec<_>>());
    }
    let count: usize = values.iter().map(Vec::len).product();
    if count != mu.len() {
        return None;
    }
    for (p, w) in mu.points().zip(mu.weights()) {
        let expected: f64 = (0..d)
            .map(|a| {
                let i = values[a].iter().position(|v| *v == p[a]).unwrap();
                weights[a][i]
            })
            .product();
        if (expected - w).abs() > 1e-12 {
            return None;
        }
    }
    Some(ProductFactor { values, weights })
}

/// Coupling of `mu1` and `mu2` minimizing `int |x_1 + x_2|^2`, i.e. the
/// repulsive two-marginal cost.
///
/// In one dimension this is the anti-monotone rearrangement. For `d > 1`
/// both measures must be product measures and the coupling is the product
/// of the per-axis anti-monotone couplings.
pub fn anti_monotone_plan(mu1: &Arc<DiscreteMeasure>, mu2: &Arc<DiscreteMeasure>) -> Result<SparsePlan> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::InvalidInput("marginals of different dimensions".into()));
    }
    let marginals = vec![mu1.clone(), mu2.clone()];
    if mu1.dim() == 1 {
        let atoms = anti_monotone_1d(mu1.coords(), mu1.weights(), mu2.coords(), mu2.weights())
            .into_iter()
            .map(|(idx, mass)| PlanAtom { idx, mass })
            .collect();
        return SparsePlan::new(marginals, atoms);
    }
    let (f1, f2) = match (factorize(mu1), factorize(mu2)) {
        (Some(f1), Some(f2)) => (f1, f2),
        _ => {
            return Err(Error::InvalidDomain(
                "componentwise anti-monotone coupling needs product-grid marginals".into(),
            ))
        }
    };
    let d = mu1.dim();
    let axis_plans: Vec<Vec<(Vec<usize>, f64)>> = (0..d)
        .map(|a| anti_monotone_1d(&f1.values[a], &f1.weights[a], &f2.values[a], &f2.weights[a]))
        .collect();
    let (index1, index2) = (mu1.index(), mu2.index());
    let mut atoms = Vec::new();
    let mut choice = vec![0usize; d];
    'outer: loop {
        let mut p1 = Vec::with_capacity(d);
        let mut p2 = Vec::with_capacity(d);
        let mut mass = 1.0;
        for a in 0..d {
            let (pair, m) = &axis_plans[a][choice[a]];
            p1.push(f1.values[a][pair[0]]);
            p2.push(f2.values[a][pair[1]]);
            mass *= m;
        }
        atoms.push(PlanAtom {
            idx: vec![index1[&PointKey::new(&p1)], index2[&PointKey::new(&p2)]],
            mass,
        });
        for a in (0..d).rev() {
            choice[a] += 1;
            if choice[a] < axis_plans[a].len() {
                continue 'outer;
            }
            choice[a] = 0;
        }
        break;
    }
    SparsePlan::new(marginals, atoms)
}

fn pow3(k: u32) -> f64 {
    3f64.powi(k as i32)
}

/// `(x, x + 3^k, -(x + (x + 3^k)))` componentwise, as one flat tuple.
fn h_map(x: &[f64], k: u32) -> Vec<f64> {
    let r: Vec<f64> = x.iter().map(|v| v + pow3(k)).collect();
    let l: Vec<f64> = x.iter().zip(&r).map(|(a, b)| -(a + b)).collect();
    [x.to_vec(), r, l].concat()
}

/// The unique optimal plan in `Gamma(mu_C, mu_R, mu_L)`: every `C` atom `x`
/// splits its mass evenly between `H_1(x)` and `H_2(x)`.
pub fn gamma0(d: usize, n: usize) -> Result<SparsePlan> {
    let (c, r, l) = build_counterexample_parts(d, n)?;
    let (ri, li) = (r.index(), l.index());
    let mut atoms = Vec::with_capacity(2 * c.len());
    for (i, x) in c.points().enumerate() {
        for k in 1..=2 {
            let t = h_map(x, k);
            atoms.push(PlanAtom {
                idx: vec![i, ri[&PointKey::new(&t[d..2 * d])], li[&PointKey::new(&t[2 * d..])]],
                mass: c.weight(i) / 2.0,
            });
        }
    }
    SparsePlan::new(vec![Arc::new(c), Arc::new(r), Arc::new(l)], atoms)
}

/// The symmetric optimal plan in `Gamma_3(mu)`: the average of `gamma0` over
/// the six coordinate permutations, on the combined measure `mu`.
pub fn gamma1(d: usize, n: usize) -> Result<SparsePlan> {
    let base = gamma0(d, n)?;
    let mu = Arc::new(build_counterexample_measure(d, n)?);
    let index = mu.index();
    let atoms: Vec<PlanAtom> = base
        .atoms()
        .iter()
        .map(|a| PlanAtom {
            idx: base.tuple_points(a).iter().map(|p| index[&PointKey::new(p)]).collect(),
            mass: a.mass,
        })
        .collect();
    SparsePlan::new(vec![mu; 3], symmetrize_atoms(&atoms, 3))
}

/// Largest `N^K` for which digit arithmetic stays exact in `f64`.
const MAX_RESOLUTION: u64 = 1 << 52;

fn fractal_resolution(base: u32, digits: u32) -> Result<u64> {
    if base < 2 || digits < 1 {
        return Err(Error::InvalidInput(format!(
            "need N >= 2 and K >= 1, got N={base}, K={digits}"
        )));
    }
    (base as u64)
        .checked_pow(digits)
        .filter(|&r| r <= MAX_RESOLUTION)
        .ok_or_else(|| Error::InvalidInput(format!("N^K = {base}^{digits} is too large")))
}

/// First `K` base-`N` digits of `z` as the integer `floor(z N^K)`.
///
/// `N`-adic rationals use their terminating expansion; `z = 1` uses the
/// all-`(N-1)` expansion.
fn leading_digits(base: u32, z: f64, digits: u32) -> Result<u64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidInput(format!("z = {z} outside [0, 1]")));
    }
    let res = fractal_resolution(base, digits)?;
    let y = z * res as f64;
    let r = y.round();
    let q = if (y - r).abs() <= 8.0 * f64::EPSILON * y.max(1.0) {
        r
    } else {
        y.floor()
    };
    Ok((q as u64).min(res - 1))
}

/// Applies `S(i) = i + 1 mod N` to each of the `K` digits of `q`.
pub fn shift_digits(base: u32, digits: u32, q: u64) -> u64 {
    let b = base as u64;
    let mut rest = q;
    let mut out = 0;
    let mut place = 1;
    for _ in 0..digits {
        let a = rest % b;
        rest /= b;
        out += ((a + 1) % b) * place;
        place *= b;
    }
    out
}

/// `T(z) = sum_k S(a_k) / N^k` over the first `K` digits of `z`.
///
/// Truncation error relative to the infinite expansion is at most `N^-K`.
pub fn fractal_map(base: u32, z: f64, digits: u32) -> Result<f64> {
    let q = leading_digits(base, z, digits)?;
    let res = fractal_resolution(base, digits)?;
    Ok(shift_digits(base, digits, q) as f64 / res as f64)
}

/// The orbit `z, T(z), ..., T^{N-1}(z)`, computed on the digits of `z` so
/// that iterates do not re-round.
pub fn fractal_orbit(base: u32, z: f64, digits: u32) -> Result<Vec<f64>> {
    let res = fractal_resolution(base, digits)?;
    let mut q = leading_digits(base, z, digits)?;
    let mut orbit = vec![z];
    for _ in 1..base {
        q = shift_digits(base, digits, q);
        orbit.push(q as f64 / res as f64);
    }
    Ok(orbit)
}

#[derive(Clone, Debug)]
pub struct FractalPlan {
    pub plan: SparsePlan,
    /// `max |x + T~(x) + ... + T~^{N-1}(x) - N/2|` over atoms and axes.
    pub max_deviation: f64,
    /// `d N N^-K`
    pub bound: f64,
}

/// Empirical plan `(id, T~, ..., T~^{N-1})_# mu` for `mu` uniform on the grid
/// `{0, 1/M, ..., (M-1)/M}^d`, with `T~` acting componentwise.
///
/// The marginals are the pushforwards of the grid; when `M = N^K` they all
/// coincide with the grid measure.
pub fn fractal_plan(base: u32, d: usize, samples: usize, digits: u32) -> Result<FractalPlan> {
    if d == 0 || samples == 0 {
        return Err(Error::InvalidInput("need d >= 1 and at least one sample".into()));
    }
    fractal_resolution(base, digits)?;
    let n = base as usize;
    let axis_orbits: Vec<Vec<f64>> = (0..samples)
        .map(|i| fractal_orbit(base, i as f64 / samples as f64, digits))
        .collect::<Result<_>>()?;
    let axis: Vec<f64> = (0..samples).map(|i| i as f64).collect();
    let grid = product_grid(&vec![axis; d]);
    let mass = 1.0 / grid.len() as f64;
    let target = base as f64 / 2.0;
    let mut max_deviation: f64 = 0.0;
    let mut tuples = Vec::with_capacity(grid.len());
    for cell in &grid {
        let orbits = &axis_orbits;
        let tuple: Vec<f64> = (0..n)
            .flat_map(|j| cell.iter().map(move |&i| orbits[i as usize][j]))
            .collect();
        for a in 0..d {
            let s: f64 = (0..n).map(|j| tuple[j * d + a]).sum();
            max_deviation = max_deviation.max((s - target).abs());
        }
        tuples.push((tuple, mass));
    }
    let plan = SparsePlan::from_point_tuples(d, n, &tuples)?;
    Ok(FractalPlan {
        plan,
        max_deviation,
        bound: d as f64 * base as f64 / fractal_resolution(base, digits)? as f64,
    })
}

/// Plan induced by the orbit `(id, -id, id, ...)` of a measure invariant
/// under `x -> -x`, for an even number of marginals.
pub fn reflection_plan(mu: &Arc<DiscreteMeasure>, n: usize) -> Result<SparsePlan> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidDomain(format!("N = {n} must be even and positive")));
    }
    let index = mu.index();
    let mut mirror = Vec::with_capacity(mu.len());
    for (i, p) in mu.points().enumerate() {
        let neg: Vec<f64> = p.iter().map(|x| -x).collect();
        match index.get(&PointKey::new(&neg)) {
            Some(&j) if mu.weight(j) == mu.weight(i) => mirror.push(j),
            _ => {
                return Err(Error::InvalidDomain(format!(
                    "measure is not symmetric under x -> -x at {p:?}"
                )))
            }
        }
    }
    let atoms = (0..mu.len())
        .map(|i| PlanAtom {
            idx: (0..n).map(|j| if j % 2 == 0 { i } else { mirror[i] }).collect(),
            mass: mu.weight(i),
        })
        .collect();
    SparsePlan::new(vec![mu.clone(); n], atoms)
}

/// Share of a square cell of side `h` centered at `(a, b)` lying in the strip
/// `|x_1 + x_2| <= 1`. Over the cell `x_1 + x_2 - a - b` has the triangular
/// law on `[-h, h]`.
fn strip_fraction(s: f64, h: f64) -> f64 {
    let cdf = |t: f64| -> f64 {
        if t <= -h {
            0.0
        } else if t <= 0.0 {
            (t + h) * (t + h) / (2.0 * h * h)
        } else if t < h {
            1.0 - (h - t) * (h - t) / (2.0 * h * h)
        } else {
            1.0
        }
    };
    cdf(1.0 - s) - cdf(-1.0 - s)
}

/// Cells `(x_1, x_2, weight)` of the hexagon quadrature, weights being the
/// plan density times cell area before normalization.
fn fat_cells(m: usize) -> Vec<(f64, f64, f64)> {
    let h = 2.0 / m as f64;
    let centers: Vec<f64> = (0..m).map(|i| -1.0 + (2 * i + 1) as f64 / m as f64).collect();
    let mut cells = Vec::new();
    for &x1 in &centers {
        for &x2 in &centers {
            let s = x1 + x2;
            let frac = strip_fraction(s, h);
            if frac <= 0.0 {
                continue;
            }
            // Hausdorff area on the plane is sqrt(3) dx1 dx2 and
            // g(t) = sqrt(3)/6 t, so the density in (x1, x2) is max/4.
            let density = 0.5 * x1.abs().max(x2.abs()).max(s.abs()) * 3f64.sqrt() / 6.0 * 3f64.sqrt();
            cells.push((x1, x2, density * frac * h * h));
        }
    }
    cells
}

/// Total mass of the unnormalized density `1/2 H^2|_H g(max |x_i|)` by the
/// same quadrature used in [`fat_plan`]. Tends to 1/2.
pub fn fat_plan_raw_mass(m: usize) -> f64 {
    fat_cells(m).iter().map(|c| c.2).sum()
}

/// Discretization of the diffuse plan on the hexagon
/// `{x_1 + x_2 + x_3 = 0} cap [-1, 1]^3` with an `m x m` grid of cells in
/// the `(x_1, x_2)` chart, normalized to unit mass.
pub fn fat_plan(m: usize) -> Result<SparsePlan> {
    if m == 0 {
        return Err(Error::InvalidInput("quadrature resolution must be positive".into()));
    }
    let cells = fat_cells(m);
    let total: f64 = cells.iter().map(|c| c.2).sum();
    let tuples: Vec<(Vec<f64>, f64)> = cells
        .into_iter()
        .map(|(x1, x2, w)| (vec![x1, x2, -(x1 + x2)], w / total))
        .collect();
    SparsePlan::from_point_tuples(1, 3, &tuples)
}

/// L1 distance between the binned masses of a one-dimensional measure and
/// the uniform law on `[lo, hi]` with `bins` equal bins.
pub fn uniform_binned_l1(mu: &DiscreteMeasure, lo: f64, hi: f64, bins: usize) -> f64 {
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0.0; bins];
    let mut outside = 0.0;
    for (p, w) in mu.points().zip(mu.weights()) {
        if p[0] < lo || p[0] > hi {
            outside += w;
            continue;
        }
        let b = (((p[0] - lo) / width).floor() as usize).min(bins - 1);
        hist[b] += w;
    }
    outside + hist.iter().map(|h| (h - 1.0 / bins as f64).abs()).sum::<f64>()
}

#[derive(Clone, Debug, Serialize)]
pub struct FatPlanSummary {
    pub resolution: usize,
    pub raw_mass: f64,
    pub marginal_l1: Vec<f64>,
    pub bins: usize,
}

/// Uniformity of each marginal of [`fat_plan`] on `[-1, 1]`.
pub fn fat_plan_summary(plan: &SparsePlan, m: usize, bins: usize) -> Result<FatPlanSummary> {
    if bins == 0 {
        return Err(Error::InvalidInput("need at least one bin".into()));
    }
    Ok(FatPlanSummary {
        resolution: m,
        raw_mass: fat_plan_raw_mass(m),
        marginal_l1: plan
            .marginals()
            .iter()
            .map(|mu| uniform_binned_l1(mu, -1.0, 1.0, bins))
            .collect(),
        bins,
    })
}
