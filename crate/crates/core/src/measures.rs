//! Discrete probability measures and the block layout of the counterexample.
//!
//! A [`DiscreteMeasure`] is a finite weighted point cloud in `R^d`. The
//! counterexample measure lives on five blocks of the real line (or their
//! `d`-fold products):
//!
//! ```text
//!   L^2 = [-10, -9]   L^1 = [-4, -3]   C = [0, 1/2]   R^1 = [3, 7/2]   R^2 = [9, 19/2]
//! ```
//!
//! with densities `mu_L = 1/2 Leb|L`, `mu_C = 2 Leb|C`, `mu_R = Leb|R` and
//! `mu = (mu_L + mu_C + mu_R) / 3`.
//!
//! The grids are aligned: every `C` atom `x` has `x + 3^k` among the `R`
//! atoms and `-(x + (x + 3^k))` among the `L` atoms. The `L` atom is computed
//! with that exact floating point expression so that the tuple
//! `(x, x + 3^k, -(x + (x + 3^k)))` sums to zero bit-exactly when summed left
//! to right.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a constructed measure.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance on the total mass of a measure read from JSON.
pub const LOAD_MASS_TOL: f64 = 1e-9;

/// Bitwise key for exact point comparison. Negative zero is folded into
/// positive zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointKey(Vec<u64>);

impl PointKey {
    pub fn new(point: &[f64]) -> Self {
        PointKey(point.iter().map(|&x| (x + 0.0).to_bits()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a probability measure, merging bitwise-identical points by
    /// adding their weights. Atoms keep the order of first appearance.
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Same as [`DiscreteMeasure::new`] with points stored row-major in one
    /// buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let merged = Self::merged(dim, coords, weights)?;
        let total: f64 = merged.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
        }
        Ok(merged)
    }

    /// Builds a measure from arbitrary nonnegative masses, rescaling them to
    /// total mass one.
    pub fn normalized(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut merged = Self::merged(dim, coords, weights)?;
        let total: f64 = merged.weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("measure has no mass".into()));
        }
        merged.weights.iter_mut().for_each(|w| *w /= total);
        Ok(merged)
    }

    fn merged(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if coords.len() != weights.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid weight {w}")));
        }
        if let Some(x) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid coordinate {x}")));
        }
        let mut index: HashMap<PointKey, usize> = HashMap::with_capacity(weights.len());
        let mut out_coords = Vec::with_capacity(coords.len());
        let mut out_weights: Vec<f64> = Vec::with_capacity(weights.len());
        for (p, &w) in coords.chunks_exact(dim).zip(&weights) {
            match index.entry(PointKey::new(p)) {
                std::collections::hash_map::Entry::Occupied(e) => out_weights[*e.get()] += w,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(out_weights.len());
                    out_coords.extend(p.iter().map(|x| x + 0.0));
                    out_weights.push(w);
                }
            }
        }
        Ok(DiscreteMeasure {
            dim,
            coords: out_coords,
            weights: out_weights,
        })
    }

    /// Point mass at `point`.
    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        let dim = point.len();
        Self::from_flat(dim, point, vec![1.0])
    }

    /// Convex combination `sum_i c_i mu_i` of measures of equal dimension.
    pub fn mix(parts: &[(f64, &DiscreteMeasure)]) -> Result<Self> {
        let dim = parts
            .first()
            .map(|(_, m)| m.dim)
            .ok_or_else(|| Error::InvalidInput("empty mixture".into()))?;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (c, m) in parts {
            if m.dim != dim {
                return Err(Error::InvalidInput("mixture of different dimensions".into()));
            }
            coords.extend_from_slice(&m.coords);
            weights.extend(m.weights.iter().map(|w| c * w));
        }
        Self::from_flat(dim, coords, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Exact lookup table from point to atom index.
    pub fn index(&self) -> HashMap<PointKey, usize> {
        self.points().enumerate().map(|(i, p)| (PointKey::new(p), i)).collect()
    }

    pub fn find(&self, point: &[f64]) -> Option<usize> {
        let key = PointKey::new(point);
        self.points().position(|p| PointKey::new(p) == key)
    }

    /// True when all atoms carry the same weight (bitwise).
    pub fn is_equally_weighted(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    /// Same atoms (as a set) with the same weights within `tol`.
    pub fn same_as(&self, other: &DiscreteMeasure, tol: f64) -> bool {
        if self.dim != other.dim || self.len() != other.len() {
            return false;
        }
        let index = other.index();
        self.points().zip(&self.weights).all(|(p, w)| {
            index
                .get(&PointKey::new(p))
                .is_some_and(|&j| (other.weights[j] - w).abs() <= tol)
        })
    }

    /// Largest per-atom weight difference to `other` after matching atoms by
    /// position; atoms present in only one measure count with their full
    /// weight.
    pub fn distance_linf(&self, other: &DiscreteMeasure) -> f64 {
        let index = other.index();
        let mut seen = vec![false; other.len()];
        let mut worst: f64 = 0.0;
        for (p, w) in self.points().zip(&self.weights) {
            match index.get(&PointKey::new(p)) {
                Some(&j) => {
                    seen[j] = true;
                    worst = worst.max((other.weights[j] - w).abs());
                }
                None => worst = worst.max(*w),
            }
        }
        for (j, s) in seen.iter().enumerate() {
            if !s {
                worst = worst.max(other.weights[j]);
            }
        }
        worst
    }

    /// Bounding box diagonal of the support.
    pub fn diameter(&self) -> f64 {
        let mut sq = 0.0;
        for a in 0..self.dim {
            let (lo, hi) = self
                .points()
                .map(|p| p[a])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if lo.is_finite() {
                sq += (hi - lo) * (hi - lo);
            }
        }
        sq.sqrt()
    }

    /// Atoms with positive weight only, plus the map from kept atoms back to
    /// the original indices.
    pub fn pruned(&self) -> (DiscreteMeasure, Vec<usize>) {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        let coords = keep.iter().flat_map(|&i| self.point(i).to_vec()).collect();
        let weights = keep.iter().map(|&i| self.weights[i]).collect();
        (
            DiscreteMeasure {
                dim: self.dim,
                coords,
                weights,
            },
            keep,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    d: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureJson {
            d: self.dim,
            points: self.points().map(<[f64]>::to_vec).collect(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MeasureJson::deserialize(d)?;
        let total: f64 = raw.weights.iter().sum();
        if !((total - 1.0).abs() <= LOAD_MASS_TOL) {
            return Err(serde::de::Error::custom(format!(
                "weights sum to {total}, expected 1 within {LOAD_MASS_TOL:e}"
            )));
        }
        let coords = raw.points.iter().flatten().copied().collect();
        if raw.points.iter().any(|p| p.len() != raw.d) {
            return Err(serde::de::Error::custom("point with wrong dimension"));
        }
        // exact round trip for sums already within the in-memory tolerance
        if (total - 1.0).abs() <= MASS_TOL {
            DiscreteMeasure::from_flat(raw.d, coords, raw.weights)
        } else {
            DiscreteMeasure::normalized(raw.d, coords, raw.weights)
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Product of closed intervals `[lo_a, hi_a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidDomain("box bounds of different lengths".into()));
        }
        Ok(AxisBox { lo, hi })
    }

    /// The cube `[lo, hi]^d`.
    pub fn cube(lo: f64, hi: f64, d: usize) -> Self {
        AxisBox {
            lo: vec![lo; d],
            hi: vec![hi; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }
}

/// Midpoints of `n` equal cells of `[lo, hi]`.
fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect()
}

/// Cartesian product of per-axis coordinate lists, first axis slowest.
pub(crate) fn product_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    out
}

/// Midpoint discretization of the uniform density on `domain` with `n`
/// cells per axis.
///
/// `density_scale` is the density of the block (`2` for `2 Leb|C`); the
/// block's mass is `density_scale * volume`. The returned measure is always
/// normalized to total mass one; use [`DiscreteMeasure::mix`] with the block
/// masses to assemble composite measures.
pub fn discretize_uniform_box(domain: &AxisBox, n: usize, density_scale: f64) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::InvalidDomain("need at least one atom per axis".into()));
    }
    if !(density_scale.is_finite() && density_scale > 0.0) {
        return Err(Error::InvalidDomain(format!("density scale {density_scale}")));
    }
    if domain
        .lo
        .iter()
        .zip(&domain.hi)
        .any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite())
    {
        return Err(Error::InvalidDomain("box has zero volume".into()));
    }
    let axes: Vec<Vec<f64>> = domain
        .lo
        .iter()
        .zip(&domain.hi)
        .map(|(&l, &h)| midpoints(l, h, n))
        .collect();
    let points = product_grid(&axes);
    let w = 1.0 / points.len() as f64;
    let weights = vec![w; points.len()];
    DiscreteMeasure::normalized(domain.dim(), points.concat(), weights)
}

fn pow3(k: u32) -> f64 {
    3f64.powi(k as i32)
}

/// The three parts `(mu_C, mu_R, mu_L)` of the counterexample, each a
/// probability measure, on aligned grids with `n` atoms per axis per block.
pub fn build_counterexample_parts(d: usize, n: usize) -> Result<(DiscreteMeasure, DiscreteMeasure, DiscreteMeasure)> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidDomain("need d >= 1 and n >= 1".into()));
    }
    let axis: Vec<f64> = (0..n).map(|i| (2 * i + 1) as f64 / (4 * n) as f64).collect();
    let c_points = product_grid(&vec![axis; d]);
    let count = c_points.len() as f64;

    let mu_c = DiscreteMeasure::new(d, c_points.clone(), vec![1.0 / count; c_points.len()])?;

    let mut r_points = Vec::with_capacity(2 * c_points.len());
    let mut l_points = Vec::with_capacity(2 * c_points.len());
    for k in 1..=2 {
        let shift = pow3(k);
        for x in &c_points {
            let r: Vec<f64> = x.iter().map(|xi| xi + shift).collect();
            let l: Vec<f64> = x.iter().zip(&r).map(|(xi, ri)| -(xi + ri)).collect();
            r_points.push(r);
            l_points.push(l);
        }
    }
    let half = vec![0.5 / count; r_points.len()];
    let mu_r = DiscreteMeasure::new(d, r_points, half.clone())?;
    let mu_l = DiscreteMeasure::new(d, l_points, half)?;
    Ok((mu_c, mu_r, mu_l))
}

/// `mu = (mu_L + mu_C + mu_R) / 3`, atoms ordered L, C, R.
pub fn build_counterexample_measure(d: usize, n: usize) -> Result<DiscreteMeasure> {
    let (c, r, l) = build_counterexample_parts(d, n)?;
    let third = 1.0 / 3.0;
    DiscreteMeasure::mix(&[(third, &l), (third, &c), (third, &r)])
}

/// One-dimensional equal-mass atomization of `mu` with `m` atoms: `m/3`
/// midpoints in `C` and `m/6` midpoints in each of `L^1, L^2, R^1, R^2`.
pub fn equal_mass_counterexample(m: usize) -> Result<DiscreteMeasure> {
    if m == 0 || !m.is_multiple_of(6) {
        return Err(Error::InvalidInput(format!(
            "atom count {m} must be a positive multiple of 6"
        )));
    }
    let block = m / 6;
    let mut points = Vec::with_capacity(m);
    for k in [2, 1] {
        points.extend(midpoints(-pow3(k) - 1.0, -pow3(k), block));
    }
    points.extend(midpoints(0.0, 0.5, 2 * block));
    for k in [1, 2] {
        points.extend(midpoints(pow3(k), pow3(k) + 0.5, block));
    }
    let weights = vec![1.0 / m as f64; m];
    DiscreteMeasure::from_flat(1, points, weights)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub second_moment: f64,
}

pub fn moments(mu: &DiscreteMeasure) -> Moments {
    let mut mean = vec![0.0; mu.dim()];
    let mut second_moment = 0.0;
    for (p, w) in mu.points().zip(mu.weights()) {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += w * x;
        }
        second_moment += w * p.iter().map(|x| x * x).sum::<f64>();
    }
    Moments { mean, second_moment }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    C,
    L(u8),
    R(u8),
}

/// The five blocks `C_d, L_d^1, L_d^2, R_d^1, R_d^2` and their masses.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub d: usize,
    pub blocks: Vec<(Block, AxisBox, f64)>,
}

impl BlockLayout {
    /// Layout of the combined measure `mu`: `C` carries 1/3, each `L^k` and
    /// `R^k` carries 1/6.
    pub fn counterexample(d: usize) -> Self {
        let mut blocks = vec![(Block::C, AxisBox::cube(0.0, 0.5, d), 1.0 / 3.0)];
        for k in 1..=2u8 {
            let s = pow3(k as u32);
            blocks.push((Block::L(k), AxisBox::cube(-s - 1.0, -s, d), 1.0 / 6.0));
            blocks.push((Block::R(k), AxisBox::cube(s, s + 0.5, d), 1.0 / 6.0));
        }
        BlockLayout { d, blocks }
    }

    /// Layout of the three-marginal variant, where `C`, `L` and `R` each carry
    /// unit mass.
    pub fn parts(d: usize) -> Self {
        let mut layout = Self::counterexample(d);
        for (b, _, m) in layout.blocks.iter_mut() {
            *m = if *b == Block::C { 1.0 } else { 0.5 };
        }
        layout
    }

    pub fn classify(&self, p: &[f64]) -> Option<Block> {
        self.blocks
            .iter()
            .find(|(_, b, _)| b.contains(p))
            .map(|(label, _, _)| *label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_grid_on_interval() {
        let mu = discretize_uniform_box(&AxisBox::cube(0.0, 0.5, 1), 2, 2.0).unwrap();
        assert_eq!(mu.coords(), &[0.125, 0.375]);
        assert_eq!(mu.weights(), &[0.5, 0.5]);

        let mu = discretize_uniform_box(&AxisBox::cube(0.0, 0.5, 2), 1, 4.0).unwrap();
        assert_eq!(mu.coords(), &[0.25, 0.25]);
        assert_eq!(mu.weights(), &[1.0]);

        let mu = discretize_uniform_box(&AxisBox::cube(3.0, 3.5, 1), 4, 2.0).unwrap();
        assert_eq!(mu.coords(), &[3.0625, 3.1875, 3.3125, 3.4375]);
        assert!(mu.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn degenerate_box_rejected() {
        let flat = AxisBox::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            discretize_uniform_box(&flat, 3, 1.0),
            Err(Error::InvalidDomain(_))
        ));
        assert!(discretize_uniform_box(&AxisBox::cube(0.0, 1.0, 1), 0, 1.0).is_err());
    }

    #[test]
    fn parts_single_atom() {
        let (c, r, l) = build_counterexample_parts(1, 1).unwrap();
        assert_eq!(c.coords(), &[0.25]);
        assert_eq!(r.coords(), &[3.25, 9.25]);
        assert_eq!(r.weights(), &[0.5, 0.5]);
        assert_eq!(l.coords(), &[-3.5, -9.5]);
        assert_eq!(l.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn parts_two_atoms_left_block() {
        let (_, _, l) = build_counterexample_parts(1, 2).unwrap();
        assert_eq!(l.coords(), &[-3.25, -3.75, -9.25, -9.75]);
        assert!(l.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn parts_in_two_dimensions() {
        let (c, _, l) = build_counterexample_parts(2, 1).unwrap();
        assert_eq!(c.coords(), &[0.25, 0.25]);
        assert_eq!(l.coords(), &[-3.5, -3.5, -9.5, -9.5]);
    }

    #[test]
    fn zero_atoms_rejected() {
        assert!(matches!(build_counterexample_parts(1, 0), Err(Error::InvalidDomain(_))));
        assert!(build_counterexample_measure(1, 0).is_err());
    }

    #[test]
    fn combined_measure_masses() {
        let mu = build_counterexample_measure(1, 1).unwrap();
        assert_eq!(mu.len(), 5);
        assert_eq!(mu.weight(mu.find(&[0.25]).unwrap()), 1.0 / 3.0);
        assert_eq!(mu.weight(mu.find(&[3.25]).unwrap()), 1.0 / 6.0);

        let mu = build_counterexample_measure(1, 2).unwrap();
        assert_eq!(mu.len(), 10);
        for (p, w) in mu.points().zip(mu.weights()) {
            let expected = if (0.0..=0.5).contains(&p[0]) {
                1.0 / 6.0
            } else {
                1.0 / 12.0
            };
            assert!((w - expected).abs() < 1e-15, "{p:?} {w}");
        }
    }

    #[test]
    fn closure_under_h_maps_and_means() {
        for d in 1..=3 {
            for n in 1..=5 {
                let (c, r, l) = build_counterexample_parts(d, n).unwrap();
                let (ri, li) = (r.index(), l.index());
                for x in c.points() {
                    for k in 1..=2 {
                        let s = pow3(k);
                        let rp: Vec<f64> = x.iter().map(|v| v + s).collect();
                        let lp: Vec<f64> = x.iter().zip(&rp).map(|(a, b)| -(a + b)).collect();
                        assert!(ri.contains_key(&PointKey::new(&rp)));
                        assert!(li.contains_key(&PointKey::new(&lp)));
                    }
                }
                let (mc, mr, ml) = (moments(&c), moments(&r), moments(&l));
                for a in 0..d {
                    assert!((mc.mean[a] + mr.mean[a] + ml.mean[a]).abs() < 1e-12);
                }
                let mu = build_counterexample_measure(d, n).unwrap();
                assert!((mu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn means_of_parts() {
        let (c, r, l) = build_counterexample_parts(1, 3).unwrap();
        assert!((moments(&c).mean[0] - 0.25).abs() < 1e-15);
        assert!((moments(&r).mean[0] - 6.25).abs() < 1e-12);
        assert!((moments(&l).mean[0] + 6.5).abs() < 1e-12);
    }

    #[test]
    fn second_moments_approach_continuum_values() {
        // Closed forms: int x^2 over the uniform laws on the blocks.
        let exact_c = 1.0 / 12.0;
        let exact_r = 0.5 * (3.5f64.powi(3) - 27.0) / 1.5 + 0.5 * (9.5f64.powi(3) - 729.0) / 1.5;
        let exact_l = 0.5 * (64.0 - 27.0) / 3.0 + 0.5 * (1000.0 - 729.0) / 3.0;
        assert!((exact_c + exact_r + exact_l - 99.5).abs() < 1e-12);

        let mut last = f64::INFINITY;
        for n in [1, 2, 4, 8, 16, 32] {
            let (c, r, l) = build_counterexample_parts(1, n).unwrap();
            let err = (moments(&c).second_moment - exact_c).abs()
                + (moments(&r).second_moment - exact_r).abs()
                + (moments(&l).second_moment - exact_l).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn duplicates_are_merged() {
        let mu = DiscreteMeasure::new(1, vec![vec![1.0], vec![0.0], vec![1.0], vec![-0.0]], vec![0.25; 4]).unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn json_load_tolerance() {
        let ok = r#"{"d":1,"points":[[0.0],[1.0]],"weights":[0.5,0.5000000001]}"#;
        let mu: DiscreteMeasure = serde_json::from_str(ok).unwrap();
        assert!((mu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let bad = r#"{"d":1,"points":[[0.0],[1.0]],"weights":[0.5,0.6]}"#;
        assert!(serde_json::from_str::<DiscreteMeasure>(bad).is_err());
        let back: DiscreteMeasure = serde_json::from_str(&serde_json::to_string(&mu).unwrap()).unwrap();
        assert_eq!(back, mu);
    }

    #[test]
    fn equal_mass_atomization() {
        let mu = equal_mass_counterexample(6).unwrap();
        assert_eq!(mu.coords(), &[-9.5, -3.5, 0.125, 0.375, 3.25, 9.25]);
        assert!(mu.is_equally_weighted());
        assert!(equal_mass_counterexample(8).is_err());
    }

    #[test]
    fn layout_classification() {
        let layout = BlockLayout::counterexample(1);
        assert_eq!(layout.classify(&[0.25]), Some(Block::C));
        assert_eq!(layout.classify(&[-9.5]), Some(Block::L(2)));
        assert_eq!(layout.classify(&[3.25]), Some(Block::R(1)));
        assert_eq!(layout.classify(&[1.0]), None);
        let total: f64 = layout.blocks.iter().map(|b| b.2).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
