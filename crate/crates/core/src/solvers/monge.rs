//! Best Monge tuple `(id, T_1, ..., T_{N-1})` for an equally weighted
//! measure. With equal masses every measure-preserving map is a permutation
//! of the atoms.

use std::sync::Arc;
use std::time::Instant;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Method, Residuals, SolveReport};
use crate::constructors::MongeTuple;
use crate::costs::{cost_tensor, tensor_cap, CostSpec, CostTensor};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Largest number of permutation tuples exhaustive mode will enumerate.
pub const MONGE_BUDGET: f64 = 1e7;
pub const DEFAULT_RESTARTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MongeMode {
    Exhaustive,
    /// 2-swap hill climbing from the identity tuple and from `restarts`
    /// random tuples.
    Local {
        restarts: usize,
        seed: u64,
    },
}

/// `(m!)^(N-1)` as a float.
pub fn search_space_size(m: usize, n: usize) -> f64 {
    let log_fact: f64 = (2..=m).map(|k| (k as f64).ln()).sum();
    (log_fact * (n as f64 - 1.0)).exp()
}

pub fn monge_search(mu: &Arc<DiscreteMeasure>, spec: &CostSpec, mode: MongeMode) -> Result<SolveReport> {
    let start = Instant::now();
    if !mu.is_equally_weighted() {
        return Err(Error::NotEquallyWeighted);
    }
    let n = spec.n_marginals;
    let m = mu.len();
    let copies: Vec<&DiscreteMeasure> = vec![mu.as_ref(); n];
    let tensor = cost_tensor(spec, &copies, tensor_cap())?;
    let (maps, evaluated) = match mode {
        MongeMode::Exhaustive => {
            let size = search_space_size(m, n);
            if size > MONGE_BUDGET * (1.0 + 1e-9) {
                return Err(Error::BudgetExceeded {
                    size,
                    budget: MONGE_BUDGET,
                });
            }
            exhaustive(&tensor, m, n)
        }
        MongeMode::Local { restarts, seed } => local(&tensor, m, n, restarts, seed),
    };
    let plan = MongeTuple::new(mu.clone(), maps)?.to_plan()?;
    let value = crate::plans::plan_cost(spec, &plan)?;
    Ok(SolveReport {
        value,
        method: Method::MongeSearch,
        iterations: evaluated as usize,
        residuals: Residuals {
            marginal_violation: plan.marginal_violation_l1(),
            candidates_evaluated: Some(evaluated),
            converged: true,
            ..Residuals::default()
        },
        plan,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Sum over atoms of the cost of `(i, T_1 i, ..., T_{N-1} i)`.
fn tuple_total(tensor: &CostTensor, maps: &[Vec<usize>]) -> f64 {
    let s = tensor.strides();
    let data = tensor.data();
    (0..maps[0].len())
        .map(|i| {
            let q = i * s[0] + maps.iter().zip(&s[1..]).map(|(t, st)| t[i] * st).sum::<usize>();
            data[q]
        })
        .sum()
}

fn exhaustive(tensor: &CostTensor, m: usize, n: usize) -> (Vec<Vec<usize>>, f64) {
    let perms: Vec<Vec<usize>> = (0..m).permutations(m).collect();
    let s = tensor.strides();
    let data = tensor.data();
    let mut best = f64::INFINITY;
    let mut best_choice = vec![0usize; n - 1];
    let mut choice = vec![0usize; n - 1];
    let mut evaluated = 0.0;
    // offsets[i] accumulates i*s_0 + sum_t perm_t(i)*s_t for all but the last map
    let mut offsets = vec![0usize; m];
    loop {
        for (i, o) in offsets.iter_mut().enumerate() {
            *o = i * s[0]
                + choice[..n - 2]
                    .iter()
                    .enumerate()
                    .map(|(t, &c)| perms[c][i] * s[t + 1])
                    .sum::<usize>();
        }
        let last = s[n - 1];
        for (c, p) in perms.iter().enumerate() {
            let total: f64 = offsets.iter().zip(p).map(|(o, &pi)| data[o + pi * last]).sum();
            evaluated += 1.0;
            if total < best {
                best = total;
                choice[n - 2] = c;
                best_choice.copy_from_slice(&choice);
            }
        }
        // advance the odometer over the leading maps
        let mut t = n - 2;
        loop {
            if t == 0 {
                let maps = best_choice.iter().map(|&c| perms[c].clone()).collect();
                return (maps, evaluated);
            }
            t -= 1;
            choice[t] += 1;
            if choice[t] < perms.len() {
                break;
            }
            choice[t] = 0;
        }
    }
}

fn local(tensor: &CostTensor, m: usize, n: usize, restarts: usize, seed: u64) -> (Vec<Vec<usize>>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity: Vec<usize> = (0..m).collect();
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    let mut evaluated = 0.0;
    for r in 0..=restarts {
        let mut maps: Vec<Vec<usize>> = (1..n)
            .map(|_| {
                let mut p = identity.clone();
                if r > 0 {
                    p.shuffle(&mut rng);
                }
                p
            })
            .collect();
        evaluated += climb(tensor, &mut maps);
        let total = tuple_total(tensor, &maps);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, maps));
        }
    }
    let (_, maps) = best.expect("at least one start");
    (maps, evaluated)
}

/// First-improvement 2-swap descent; returns the number of swaps examined.
fn climb(tensor: &CostTensor, maps: &mut [Vec<usize>]) -> f64 {
    let s = tensor.strides();
    let data = tensor.data();
    let m = maps[0].len();
    let scale = 1.0 + data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cost_at = |maps: &[Vec<usize>], i: usize, t: usize, v: usize| {
        let q = i * s[0]
            + maps
                .iter()
                .enumerate()
                .map(|(u, p)| if u == t { v } else { p[i] } * s[u + 1])
                .sum::<usize>();
        data[q]
    };
    let mut examined = 0.0;
    let mut improved = true;
    while improved {
        improved = false;
        for t in 0..maps.len() {
            for a in 0..m {
                for b in a + 1..m {
                    examined += 1.0;
                    let (ta, tb) = (maps[t][a], maps[t][b]);
                    let delta = cost_at(maps, a, t, tb) + cost_at(maps, b, t, ta)
                        - cost_at(maps, a, t, ta)
                        - cost_at(maps, b, t, tb);
                    if delta < -1e-12 * scale {
                        maps[t].swap(a, b);
                        improved = true;
                    }
                }
            }
        }
    }
    examined
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostKind;

    fn uniform(xs: &[f64]) -> Arc<DiscreteMeasure> {
        let w = 1.0 / xs.len() as f64;
        Arc::new(DiscreteMeasure::new(1, xs.iter().map(|&x| vec![x]).collect(), vec![w; xs.len()]).unwrap())
    }

    #[test]
    fn two_point_swap() {
        let spec = CostSpec::new(CostKind::Repulsive, 2, 1).unwrap();
        let r = monge_search(&uniform(&[0.0, 1.0]), &spec, MongeMode::Exhaustive).unwrap();
        assert_eq!(r.value, -1.0);
        assert_eq!(r.plan.support(), vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn cyclic_pair_for_three_points() {
        let spec = CostSpec::new(CostKind::SumSquare, 3, 1).unwrap();
        let r = monge_search(&uniform(&[-1.0, 0.0, 1.0]), &spec, MongeMode::Exhaustive).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.residuals.candidates_evaluated, Some(36.0));
        for a in r.plan.atoms() {
            assert_eq!(r.plan.tuple_sum(a), vec![0.0]);
        }
    }

    #[test]
    fn local_matches_exhaustive_on_small_instance() {
        let spec = CostSpec::new(CostKind::Repulsive, 3, 1).unwrap();
        let mu = uniform(&[-2.0, -0.5, 0.25, 1.0, 3.0]);
        let ex = monge_search(&mu, &spec, MongeMode::Exhaustive).unwrap();
        let lo = monge_search(&mu, &spec, MongeMode::Local { restarts: 32, seed: 0 }).unwrap();
        assert!((ex.value - lo.value).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let spec = CostSpec::new(CostKind::Repulsive, 3, 1).unwrap();
        let uneven = Arc::new(DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap());
        assert!(matches!(
            monge_search(&uneven, &spec, MongeMode::Exhaustive),
            Err(Error::NotEquallyWeighted)
        ));
        let big = uniform(&(0..9).map(f64::from).collect::<Vec<_>>());
        assert!(matches!(
            monge_search(&big, &spec, MongeMode::Exhaustive),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn search_space() {
        assert_eq!(search_space_size(6, 3).round(), 518_400.0);
        assert_eq!(search_space_size(3, 3).round(), 36.0);
    }
}
