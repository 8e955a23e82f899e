use std::sync::Arc;

use mmot_core::certify::{hyperplane_certificate, jensen_bound};
use mmot_core::constructors::{anti_monotone_plan, gamma0, gamma1, reflection_plan};
use mmot_core::costs::{decompose_constant, eval_cost, CostKind, CostSpec};
use mmot_core::measures::{build_counterexample_measure, build_counterexample_parts, DiscreteMeasure};
use mmot_core::plans::{plan_cost, random_vertex_plan, symmetrize, SparsePlan};
use mmot_core::solvers::{monge_search, solve_lp, MongeMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dyadic coordinates keep sums and squares exact.
fn measure(dim: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((prop::collection::vec(-40i32..40, dim), 1u32..10), 1..=max_atoms).prop_map(move |atoms| {
        let coords = atoms
            .iter()
            .flat_map(|(p, _)| p.iter().map(|&x| x as f64 / 4.0))
            .collect();
        let weights = atoms.iter().map(|(_, w)| *w as f64).collect();
        DiscreteMeasure::normalized(dim, coords, weights).unwrap()
    })
}

fn equal_mass(max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::hash_set(-40i32..40, 2..=max_atoms).prop_map(|xs| {
        let m = xs.len();
        DiscreteMeasure::new(
            1,
            xs.into_iter().map(|x| vec![x as f64 / 4.0]).collect(),
            vec![1.0 / m as f64; m],
        )
        .unwrap()
    })
}

fn instance(n: usize, dim: usize, max_atoms: usize) -> impl Strategy<Value = Vec<Arc<DiscreteMeasure>>> {
    prop::collection::vec(measure(dim, max_atoms).prop_map(Arc::new), n)
}

fn kinds() -> impl Strategy<Value = CostKind> {
    prop_oneof![
        Just(CostKind::Attractive),
        Just(CostKind::Repulsive),
        Just(CostKind::SumSquare)
    ]
}

fn scale(ms: &[Arc<DiscreteMeasure>]) -> f64 {
    ms.iter()
        .flat_map(|m| m.coords().iter())
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .powi(2)
        * (ms.len() * ms.len()) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_is_symmetric(kind in kinds(), pts in prop::collection::vec(prop::collection::vec(-40i32..40, 2), 2..5), seed in any::<u64>()) {
        let tuple: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&x| x as f64 / 4.0).collect()).collect();
        let spec = CostSpec::new(kind, tuple.len(), 2).unwrap();
        let mut shuffled = tuple.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(eval_cost(&spec, &tuple).unwrap(), eval_cost(&spec, &shuffled).unwrap());
    }

    #[test]
    fn attractive_is_negated_repulsive(pts in prop::collection::vec(prop::collection::vec(-40i32..40, 3), 2..5)) {
        let tuple: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&x| x as f64 / 4.0).collect()).collect();
        let att = CostSpec::new(CostKind::Attractive, tuple.len(), 3).unwrap();
        let rep = CostSpec::new(CostKind::Repulsive, tuple.len(), 3).unwrap();
        prop_assert_eq!(eval_cost(&att, &tuple).unwrap(), -eval_cost(&rep, &tuple).unwrap());
    }

    #[test]
    fn decomposition_holds_on_random_vertices(ms in (2usize..5, 1usize..3).prop_flat_map(|(n, d)| instance(n, d, 5)), seed in any::<u64>()) {
        let n = ms.len();
        let d = ms[0].dim();
        let refs: Vec<&DiscreteMeasure> = ms.iter().map(|m| m.as_ref()).collect();
        let rep = CostSpec::new(CostKind::Repulsive, n, d).unwrap();
        let ss = CostSpec::new(CostKind::SumSquare, n, d).unwrap();
        let offset = decompose_constant(&rep, &refs).unwrap();
        let plan = random_vertex_plan(&ms, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let lhs = plan_cost(&rep, &plan).unwrap();
        let rhs = plan_cost(&ss, &plan).unwrap() - offset;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + scale(&ms)), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn jensen_bounds_every_vertex(ms in instance(3, 2, 5), seed in any::<u64>()) {
        let refs: Vec<&DiscreteMeasure> = ms.iter().map(|m| m.as_ref()).collect();
        let ss = CostSpec::new(CostKind::SumSquare, 3, 2).unwrap();
        let plan = random_vertex_plan(&ms, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cost = plan_cost(&ss, &plan).unwrap();
        prop_assert!(jensen_bound(&refs) <= cost + 1e-9 * (1.0 + scale(&ms)));
        let cert = hyperplane_certificate(&plan, None).unwrap();
        prop_assert!(cert.gap >= 0.0);
        prop_assert_eq!(cert.gap == 0.0, cert.max_deviation == 0.0);
    }

    #[test]
    fn vertex_plans_are_sparse(ms in instance(3, 1, 6), seed in any::<u64>()) {
        let plan = random_vertex_plan(&ms, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bound: usize = ms.iter().map(|m| m.len()).sum::<usize>() - 2;
        prop_assert!(plan.len() <= bound);
    }

    #[test]
    fn symmetrize_is_idempotent(mu in measure(1, 4), seed in any::<u64>()) {
        let mu = Arc::new(mu);
        let plan = random_vertex_plan(&[mu.clone(), mu.clone(), mu], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let once = symmetrize(&plan).unwrap();
        let twice = symmetrize(&once).unwrap();
        prop_assert!(once.approx_eq(&twice, 1e-12));
    }

    #[test]
    fn lp_is_below_every_vertex_and_above_jensen(ms in instance(3, 1, 5), seed in any::<u64>()) {
        let refs: Vec<&DiscreteMeasure> = ms.iter().map(|m| m.as_ref()).collect();
        let rep = CostSpec::new(CostKind::Repulsive, 3, 1).unwrap();
        let lp = solve_lp(&ms, &rep).unwrap();
        let tol = 1e-9 * (1.0 + scale(&ms));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let plan = random_vertex_plan(&ms, &mut rng).unwrap();
            prop_assert!(lp.value <= plan_cost(&rep, &plan).unwrap() + tol);
        }
        let floor = jensen_bound(&refs) - decompose_constant(&rep, &refs).unwrap();
        prop_assert!(lp.value >= floor - tol);
        prop_assert!(lp.plan.len() <= ms.iter().map(|m| m.len()).sum::<usize>() - 2);
        let gap = lp.residuals.duality_gap.unwrap();
        prop_assert!(gap <= 1e-9 * (1.0 + lp.value.abs()), "duality gap {}", gap);
    }

    #[test]
    fn monge_is_above_lp(mu in equal_mass(4), kind in kinds()) {
        let mu = Arc::new(mu);
        let spec = CostSpec::new(kind, 3, 1).unwrap();
        let lp = solve_lp(&[mu.clone(), mu.clone(), mu.clone()], &spec).unwrap();
        let ex = monge_search(&mu, &spec, MongeMode::Exhaustive).unwrap();
        let lo = monge_search(&mu, &spec, MongeMode::Local { restarts: 32, seed: 0 }).unwrap();
        let tol = 1e-9 * (1.0 + lp.value.abs());
        prop_assert!(ex.value >= lp.value - tol);
        prop_assert!(lo.value >= ex.value - tol);
    }

    #[test]
    fn local_search_finds_the_exhaustive_optimum(mu in equal_mass(5)) {
        let mu = Arc::new(mu);
        let spec = CostSpec::new(CostKind::Repulsive, 3, 1).unwrap();
        let ex = monge_search(&mu, &spec, MongeMode::Exhaustive).unwrap();
        let lo = monge_search(&mu, &spec, MongeMode::Local { restarts: 32, seed: 0 }).unwrap();
        prop_assert!((ex.value - lo.value).abs() <= 1e-9 * (1.0 + ex.value.abs()));
    }

    #[test]
    fn measure_json_round_trip(mu in measure(2, 6)) {
        let text = serde_json::to_string(&mu).unwrap();
        let back: DiscreteMeasure = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, mu);
    }

    #[test]
    fn plan_json_round_trip(ms in instance(3, 1, 4), seed in any::<u64>()) {
        let plan = random_vertex_plan(&ms, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let text = serde_json::to_string(&plan).unwrap();
        let back: SparsePlan = serde_json::from_str(&text).unwrap();
        prop_assert!(back.approx_eq(&plan, 0.0));
    }

    #[test]
    fn anti_monotone_is_optimal_for_two_marginals(a in measure(1, 6), b in measure(1, 6)) {
        let (a, b) = (Arc::new(a), Arc::new(b));
        let rep = CostSpec::new(CostKind::Repulsive, 2, 1).unwrap();
        let plan = anti_monotone_plan(&a, &b).unwrap();
        let lp = solve_lp(&[a, b], &rep).unwrap();
        let cost = plan_cost(&rep, &plan).unwrap();
        prop_assert!((cost - lp.value).abs() <= 1e-9 * (1.0 + cost.abs()));
    }
}

#[test]
fn lp_is_below_the_constructed_plans() {
    for d in 1..=2 {
        let rep = CostSpec::new(CostKind::Repulsive, 3, d).unwrap();
        let (c, r, l) = build_counterexample_parts(d, 1).unwrap();
        let parts = vec![Arc::new(c), Arc::new(r), Arc::new(l)];
        let lp = solve_lp(&parts, &rep).unwrap();
        assert!(lp.value <= plan_cost(&rep, &gamma0(d, 1).unwrap()).unwrap() + 1e-9);

        let mu = Arc::new(build_counterexample_measure(d, 1).unwrap());
        let full = solve_lp(&[mu.clone(), mu.clone(), mu.clone()], &rep).unwrap();
        assert!(full.value <= plan_cost(&rep, &gamma1(d, 1).unwrap()).unwrap() + 1e-9);
    }

    let sym =
        Arc::new(DiscreteMeasure::new(1, vec![vec![-1.5], vec![-0.5], vec![0.5], vec![1.5]], vec![0.25; 4]).unwrap());
    for n in [2, 4] {
        let rep = CostSpec::new(CostKind::Repulsive, n, 1).unwrap();
        let plan = reflection_plan(&sym, n).unwrap();
        let lp = solve_lp(&vec![sym.clone(); n], &rep).unwrap();
        let cost = plan_cost(&rep, &plan).unwrap();
        assert!(lp.value <= cost + 1e-9, "N={n}: {} > {cost}", lp.value);
    }
}
