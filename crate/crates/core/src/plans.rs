//! Sparse `N`-way couplings over the atoms of `N` discrete marginals.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::measures::{Block, BlockLayout, DiscreteMeasure, PointKey, MASS_TOL};

/// Per-atom tolerance on the projections of a feasible plan.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Default mass threshold for disintegration counts.
pub const DEFAULT_MASS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanAtom {
    pub idx: Vec<usize>,
    pub mass: f64,
}

/// A coupling stored as index tuples into its marginals.
///
/// Atoms are kept sorted by index tuple, without duplicates and without
/// zero masses.
#[derive(Clone, Debug)]
pub struct SparsePlan {
    marginals: Vec<Arc<DiscreteMeasure>>,
    atoms: Vec<PlanAtom>,
    tolerance: f64,
}

impl SparsePlan {
    /// Validated plan: masses sum to one and every projection matches its
    /// marginal within [`FEASIBILITY_TOL`].
    pub fn new(marginals: Vec<Arc<DiscreteMeasure>>, atoms: Vec<PlanAtom>) -> Result<Self> {
        Self::with_tolerance(marginals, atoms, FEASIBILITY_TOL)
    }

    /// Like [`SparsePlan::new`] with a looser feasibility tolerance, for
    /// approximate solvers.
    pub fn with_tolerance(
        marginals: Vec<Arc<DiscreteMeasure>>,
        mut atoms: Vec<PlanAtom>,
        tolerance: f64,
    ) -> Result<Self> {
        let n = marginals.len();
        if n < 2 {
            return Err(Error::InvalidInput("a plan needs at least two marginals".into()));
        }
        let dim = marginals[0].dim();
        if marginals.iter().any(|m| m.dim() != dim) {
            return Err(Error::InvalidInput("marginals of different dimensions".into()));
        }
        for a in &atoms {
            if a.idx.len() != n {
                return Err(Error::InvalidInput(format!(
                    "atom {:?} has {} indices, expected {n}",
                    a.idx,
                    a.idx.len()
                )));
            }
            if let Some((j, _)) = a.idx.iter().enumerate().find(|(j, &i)| i >= marginals[*j].len()) {
                return Err(Error::InvalidInput(format!(
                    "atom {:?} index out of range for marginal {j}",
                    a.idx
                )));
            }
            if !(a.mass.is_finite() && a.mass >= 0.0) {
                return Err(Error::InfeasiblePlan(format!("atom {:?} has mass {}", a.idx, a.mass)));
            }
        }
        atoms.retain(|a| a.mass > 0.0);
        atoms.sort_by(|a, b| a.idx.cmp(&b.idx));
        if let Some(w) = atoms.windows(2).find(|w| w[0].idx == w[1].idx) {
            return Err(Error::InvalidInput(format!("duplicate atom {:?}", w[0].idx)));
        }
        let plan = SparsePlan {
            marginals,
            atoms,
            tolerance,
        };
        let total: f64 = plan.atoms.iter().map(|a| a.mass).sum();
        let sum_tol = if tolerance > FEASIBILITY_TOL {
            tolerance
        } else {
            MASS_TOL
        };
        if (total - 1.0).abs() > sum_tol {
            return Err(Error::InfeasiblePlan(format!("masses sum to {total}")));
        }
        let violation = plan.max_marginal_violation();
        if violation > tolerance {
            return Err(Error::InfeasiblePlan(format!(
                "projection differs from its marginal by {violation:e}"
            )));
        }
        Ok(plan)
    }

    /// Merges duplicate index tuples before validating.
    pub fn from_unmerged(marginals: Vec<Arc<DiscreteMeasure>>, atoms: Vec<PlanAtom>) -> Result<Self> {
        Self::new(marginals, merge_atoms(atoms))
    }

    /// Plan whose marginals are the pushforwards of the given point tuples.
    ///
    /// Each tuple is `N` consecutive `dim`-vectors; identical tuples merge.
    pub fn from_point_tuples(dim: usize, n: usize, tuples: &[(Vec<f64>, f64)]) -> Result<Self> {
        if n < 2 || dim == 0 {
            return Err(Error::InvalidInput("need N >= 2 and d >= 1".into()));
        }
        let mut indices: Vec<HashMap<PointKey, usize>> = vec![HashMap::new(); n];
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut weights: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut atoms = Vec::with_capacity(tuples.len());
        for (tuple, mass) in tuples {
            if tuple.len() != n * dim {
                return Err(Error::InvalidInput(format!(
                    "tuple of length {} for N={n}, d={dim}",
                    tuple.len()
                )));
            }
            let mut idx = Vec::with_capacity(n);
            for j in 0..n {
                let p = &tuple[j * dim..(j + 1) * dim];
                let next = weights[j].len();
                let i = *indices[j].entry(PointKey::new(p)).or_insert_with(|| {
                    coords[j].extend_from_slice(p);
                    weights[j].push(0.0);
                    next
                });
                weights[j][i] += mass;
                idx.push(i);
            }
            atoms.push(PlanAtom { idx, mass: *mass });
        }
        let marginals = coords
            .into_iter()
            .zip(weights)
            .map(|(c, w)| DiscreteMeasure::from_flat(dim, c, w).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Self::from_unmerged(marginals, atoms)
    }

    pub fn n_marginals(&self) -> usize {
        self.marginals.len()
    }

    pub fn dim(&self) -> usize {
        self.marginals[0].dim()
    }

    pub fn marginals(&self) -> &[Arc<DiscreteMeasure>] {
        &self.marginals
    }

    pub fn atoms(&self) -> &[PlanAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Sorted index tuples carrying mass.
    pub fn support(&self) -> Vec<Vec<usize>> {
        self.atoms.iter().map(|a| a.idx.clone()).collect()
    }

    /// Coordinates of an atom as `N` consecutive `d`-vectors.
    pub fn tuple_coords(&self, atom: &PlanAtom) -> Vec<f64> {
        atom.idx
            .iter()
            .zip(&self.marginals)
            .flat_map(|(&i, m)| m.point(i).iter().copied())
            .collect()
    }

    pub fn tuple_points(&self, atom: &PlanAtom) -> Vec<Vec<f64>> {
        atom.idx
            .iter()
            .zip(&self.marginals)
            .map(|(&i, m)| m.point(i).to_vec())
            .collect()
    }

    /// Componentwise `x_1 + ... + x_N` of an atom, summed left to right.
    pub fn tuple_sum(&self, atom: &PlanAtom) -> Vec<f64> {
        let mut s = vec![0.0; self.dim()];
        for (&i, m) in atom.idx.iter().zip(&self.marginals) {
            for (acc, x) in s.iter_mut().zip(m.point(i)) {
                *acc += x;
            }
        }
        s
    }

    /// Masses of the `j`-th projection, indexed like marginal `j`.
    pub fn projection_weights(&self, j: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.marginals[j].len()];
        for a in &self.atoms {
            w[a.idx[j]] += a.mass;
        }
        w
    }

    /// Largest per-atom difference between a projection and its marginal.
    pub fn max_marginal_violation(&self) -> f64 {
        (0..self.n_marginals())
            .flat_map(|j| {
                let w = self.projection_weights(j);
                let m = &self.marginals[j];
                w.into_iter()
                    .zip(m.weights())
                    .map(|(p, q)| (p - q).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Largest L1 distance between a projection and its marginal.
    pub fn marginal_violation_l1(&self) -> f64 {
        (0..self.n_marginals())
            .map(|j| {
                self.projection_weights(j)
                    .iter()
                    .zip(self.marginals[j].weights())
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Same support and masses within `tol`, after matching marginal atoms
    /// by coordinates.
    pub fn approx_eq(&self, other: &SparsePlan, tol: f64) -> bool {
        if self.n_marginals() != other.n_marginals() || self.dim() != other.dim() {
            return false;
        }
        let mine: HashMap<Vec<PointKey>, f64> = self.keyed_atoms();
        let theirs: HashMap<Vec<PointKey>, f64> = other.keyed_atoms();
        let keys: std::collections::HashSet<&Vec<PointKey>> = mine.keys().chain(theirs.keys()).collect();
        keys.into_iter().all(|k| {
            let a = mine.get(k).copied().unwrap_or(0.0);
            let b = theirs.get(k).copied().unwrap_or(0.0);
            (a - b).abs() <= tol
        })
    }

    fn keyed_atoms(&self) -> HashMap<Vec<PointKey>, f64> {
        self.atoms
            .iter()
            .map(|a| {
                let key = a
                    .idx
                    .iter()
                    .zip(&self.marginals)
                    .map(|(&i, m)| PointKey::new(m.point(i)))
                    .collect();
                (key, a.mass)
            })
            .collect()
    }
}

fn merge_atoms(mut atoms: Vec<PlanAtom>) -> Vec<PlanAtom> {
    atoms.sort_by(|a, b| a.idx.cmp(&b.idx));
    let mut out: Vec<PlanAtom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.last_mut() {
            Some(last) if last.idx == a.idx => last.mass += a.mass,
            _ => out.push(a),
        }
    }
    out
}

/// Pushforward of the plan under the `j`-th projection (0-based), keeping
/// only atoms that receive mass.
pub fn marginal(plan: &SparsePlan, j: usize) -> Result<DiscreteMeasure> {
    if j >= plan.n_marginals() {
        return Err(Error::InvalidInput(format!(
            "coordinate {j} out of range for N={}",
            plan.n_marginals()
        )));
    }
    let w = plan.projection_weights(j);
    let m = &plan.marginals[j];
    let (coords, weights): (Vec<Vec<f64>>, Vec<f64>) = w
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(i, &x)| (m.point(i).to_vec(), x))
        .unzip();
    DiscreteMeasure::normalized(m.dim(), coords.concat(), weights)
}

/// `sum_atoms mass * c(x_{i_1}, ..., x_{i_N})`.
pub fn plan_cost(spec: &CostSpec, plan: &SparsePlan) -> Result<f64> {
    if spec.n_marginals != plan.n_marginals() || spec.dim != plan.dim() {
        return Err(Error::InvalidInput(format!(
            "cost for N={}, d={} applied to a plan with N={}, d={}",
            spec.n_marginals,
            spec.dim,
            plan.n_marginals(),
            plan.dim()
        )));
    }
    let mut tuple = Vec::with_capacity(spec.n_marginals * spec.dim);
    let mut total = 0.0;
    for a in &plan.atoms {
        tuple.clear();
        for (&i, m) in a.idx.iter().zip(&plan.marginals) {
            tuple.extend_from_slice(m.point(i));
        }
        total += a.mass * spec.eval_flat(&tuple);
    }
    Ok(total)
}

/// Averages `atoms` over all `N!` coordinate permutations. Indices must
/// refer to a common atom set.
pub(crate) fn symmetrize_atoms(atoms: &[PlanAtom], n: usize) -> Vec<PlanAtom> {
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let count = perms.len() as f64;
    let mut sums: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for a in atoms {
        for p in &perms {
            let idx: Vec<usize> = p.iter().map(|&k| a.idx[k]).collect();
            *sums.entry(idx).or_insert(0.0) += a.mass;
        }
    }
    sums.into_iter()
        .map(|(idx, s)| PlanAtom { idx, mass: s / count })
        .collect()
}

/// `(1/N!) sum_sigma sigma_# gamma` for a plan whose marginals all coincide.
pub fn symmetrize(plan: &SparsePlan) -> Result<SparsePlan> {
    let base = plan.marginals[0].clone();
    let base_index = base.index();
    let mut remap: Vec<Vec<usize>> = Vec::with_capacity(plan.n_marginals());
    for (j, m) in plan.marginals.iter().enumerate() {
        if !m.same_as(&base, MASS_TOL) {
            return Err(Error::NotExchangeable(format!("marginal {j} differs from marginal 0")));
        }
        remap.push(m.points().map(|p| base_index[&PointKey::new(p)]).collect());
    }
    let atoms: Vec<PlanAtom> = plan
        .atoms
        .iter()
        .map(|a| PlanAtom {
            idx: a.idx.iter().enumerate().map(|(j, &i)| remap[j][i]).collect(),
            mass: a.mass,
        })
        .collect();
    let n = plan.n_marginals();
    SparsePlan::with_tolerance(vec![base; n], symmetrize_atoms(&atoms, n), plan.tolerance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDiagnostic {
    pub coordinate: usize,
    /// `(atom index of marginal j, number of partner tuples)` for every atom
    /// of marginal `j` above the mass threshold.
    pub multiplicities: Vec<(usize, usize)>,
    /// multiplicity -> number of atoms with it
    pub histogram: BTreeMap<usize, usize>,
    pub max_multiplicity: usize,
    pub min_multiplicity: usize,
    pub is_graphical: bool,
}

impl GraphDiagnostic {
    pub fn multiplicity_of(&self, atom: usize) -> Option<usize> {
        self.multiplicities.iter().find(|(i, _)| *i == atom).map(|(_, m)| *m)
    }
}

/// Disintegrates the plan along coordinate `j` and counts, for each atom of
/// marginal `j`, the partner tuples whose conditional mass exceeds
/// `mass_tol`.
pub fn graph_multiplicity(plan: &SparsePlan, j: usize, mass_tol: f64) -> Result<GraphDiagnostic> {
    if j >= plan.n_marginals() {
        return Err(Error::InvalidInput(format!(
            "coordinate {j} out of range for N={}",
            plan.n_marginals()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for a in &plan.atoms {
        groups.entry(a.idx[j]).or_default().push(a.mass);
    }
    let mut multiplicities = Vec::with_capacity(groups.len());
    for (atom, masses) in groups {
        let total: f64 = masses.iter().sum();
        if total <= mass_tol {
            continue;
        }
        let count = masses.iter().filter(|&&m| m / total > mass_tol).count();
        multiplicities.push((atom, count));
    }
    let mut histogram = BTreeMap::new();
    for (_, m) in &multiplicities {
        *histogram.entry(*m).or_insert(0) += 1;
    }
    let max_multiplicity = multiplicities.iter().map(|x| x.1).max().unwrap_or(0);
    let min_multiplicity = multiplicities.iter().map(|x| x.1).min().unwrap_or(0);
    Ok(GraphDiagnostic {
        coordinate: j,
        multiplicities,
        histogram,
        max_multiplicity,
        min_multiplicity,
        is_graphical: max_multiplicity <= 1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub ok: bool,
    /// Coordinates of every offending tuple.
    pub violations: Vec<Vec<Vec<f64>>>,
}

/// Position of the `C`, `R^k` and `L^k` coordinates of a three-point tuple
/// with a common `k`, if it has that shape.
fn block_positions(layout: &BlockLayout, points: &[Vec<f64>]) -> Option<[usize; 3]> {
    if points.len() != 3 {
        return None;
    }
    let blocks: Vec<Block> = points.iter().map(|p| layout.classify(p)).collect::<Option<Vec<_>>>()?;
    let c = blocks.iter().position(|b| *b == Block::C)?;
    let r = blocks.iter().position(|b| matches!(b, Block::R(_)))?;
    let l = blocks.iter().position(|b| matches!(b, Block::L(_)))?;
    match (blocks[r], blocks[l]) {
        (Block::R(kr), Block::L(kl)) if kr == kl => Some([c, r, l]),
        _ => None,
    }
}

/// True iff every support tuple is a permutation of a point of
/// `C x R^k x L^k` for one `k`.
pub fn check_block_structure(plan: &SparsePlan, layout: &BlockLayout) -> BlockCheck {
    let violations: Vec<Vec<Vec<f64>>> = plan
        .atoms
        .iter()
        .map(|a| plan.tuple_points(a))
        .filter(|pts| block_positions(layout, pts).is_none())
        .collect();
    BlockCheck {
        ok: violations.is_empty(),
        violations,
    }
}

/// Pushes the plan forward under the piecewise coordinate permutation that
/// sends each support tuple into `C x R x L`.
pub fn reorder_blocks(plan: &SparsePlan, layout: &BlockLayout) -> Result<SparsePlan> {
    let dim = plan.dim();
    let mut tuples = Vec::with_capacity(plan.len());
    for a in &plan.atoms {
        let pts = plan.tuple_points(a);
        let order =
            block_positions(layout, &pts).ok_or_else(|| Error::BlockStructureViolation { tuple: pts.clone() })?;
        let coords: Vec<f64> = order.iter().flat_map(|&k| pts[k].iter().copied()).collect();
        tuples.push((coords, a.mass));
    }
    SparsePlan::from_point_tuples(dim, 3, &tuples)
}

/// Multi-marginal north-west corner rule over the given atom orders.
///
/// Returns exactly `sum_j n_j - N + 1` cells, degenerate zero cells
/// included, which form a basis of the marginal constraints.
pub(crate) fn northwest_corner_cells(weights: &[&[f64]], orders: &[Vec<usize>]) -> Vec<(Vec<usize>, f64)> {
    let n = weights.len();
    let mut pos = vec![0usize; n];
    let mut resid: Vec<f64> = (0..n).map(|j| weights[j][orders[j][0]]).collect();
    let mut cells = Vec::new();
    loop {
        let idx: Vec<usize> = (0..n).map(|j| orders[j][pos[j]]).collect();
        let m = resid.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
        cells.push((idx, m));
        resid.iter_mut().for_each(|r| *r -= m);
        let next = (0..n)
            .filter(|&j| pos[j] + 1 < orders[j].len())
            .min_by(|&a, &b| resid[a].partial_cmp(&resid[b]).unwrap_or(std::cmp::Ordering::Equal));
        match next {
            Some(j) => {
                pos[j] += 1;
                resid[j] += weights[j][orders[j][pos[j]]];
            }
            None => break,
        }
    }
    cells
}

/// North-west corner plan after shuffling every marginal's atom order: a
/// random vertex of the coupling polytope.
pub fn random_vertex_plan<R: Rng + ?Sized>(marginals: &[Arc<DiscreteMeasure>], rng: &mut R) -> Result<SparsePlan> {
    let orders: Vec<Vec<usize>> = marginals
        .iter()
        .map(|m| {
            let mut o: Vec<usize> = (0..m.len()).collect();
            o.shuffle(rng);
            o
        })
        .collect();
    let weights: Vec<&[f64]> = marginals.iter().map(|m| m.weights()).collect();
    let atoms = northwest_corner_cells(&weights, &orders)
        .into_iter()
        .filter(|(_, m)| *m > 0.0)
        .map(|(idx, mass)| PlanAtom { idx, mass })
        .collect();
    SparsePlan::new(marginals.to_vec(), atoms)
}

/// Marginal entry of the plan file: inline measure or path to a measure file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarginalRef {
    Inline(DiscreteMeasure),
    Path(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanFile {
    #[serde(rename = "N")]
    pub n: usize,
    pub marginals: Vec<MarginalRef>,
    pub atoms: Vec<PlanAtom>,
}

impl PlanFile {
    /// Resolves marginal paths relative to `base_dir` and validates.
    pub fn into_plan(self, base_dir: &Path) -> Result<SparsePlan> {
        if self.marginals.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "N={} but {} marginals",
                self.n,
                self.marginals.len()
            )));
        }
        let marginals = self
            .marginals
            .into_iter()
            .map(|m| match m {
                MarginalRef::Inline(mu) => Ok(Arc::new(mu)),
                MarginalRef::Path(p) => {
                    let text = std::fs::read_to_string(base_dir.join(p))?;
                    Ok(Arc::new(serde_json::from_str(&text)?))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SparsePlan::new(marginals, self.atoms)
    }
}

impl From<&SparsePlan> for PlanFile {
    fn from(plan: &SparsePlan) -> Self {
        PlanFile {
            n: plan.n_marginals(),
            marginals: plan
                .marginals
                .iter()
                .map(|m| MarginalRef::Inline((**m).clone()))
                .collect(),
            atoms: plan.atoms.clone(),
        }
    }
}

impl Serialize for SparsePlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PlanFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparsePlan {
    /// Inline marginals only; use [`PlanFile::into_plan`] for path references.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = PlanFile::deserialize(d)?;
        if file.marginals.iter().any(|m| matches!(m, MarginalRef::Path(_))) {
            return Err(serde::de::Error::custom(
                "marginal given as a path; load through PlanFile",
            ));
        }
        file.into_plan(Path::new(".")).map_err(serde::de::Error::custom)
    }
}
