use proptest::prelude::*;
use robustkit::generators::{random_budget, random_ellipsoid_affine, random_poly_affine};
use robustkit::lp::solve_lp;
use robustkit::oracle::mixture_worst_case;
use robustkit::reductions::{budget_enumerate, covering_dual_fit, polyhedral_whp, robust_objective};
use robustkit::rng::seeded;
use robustkit::{
    exact_robust_opt, random_instance, solve_robust_relaxation, verdict, Algorithm, AncrrVerifier, GreedyVerifier,
    Verifier, IntegralSolution, RelaxationMethod, ReductionConfig, SetCoverInstance, UncertaintySet,
};

/// Budget robust optimum by a full scan with the sorted-deviation formula.
fn budget_opt_by_scan(inst: &SetCoverInstance, c0: &[f64], d: &[f64], k: usize) -> f64 {
    let n = inst.num_sets();
    let mut best = f64::INFINITY;
    for mask in 1u32..1 << n {
        let x: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
        if !inst.is_feasible(&x).unwrap() {
            continue;
        }
        let mut gains: Vec<f64> = (0..n).filter(|&j| x[j]).map(|j| d[j]).collect();
        gains.sort_by(|a, b| b.total_cmp(a));
        let nominal: f64 = (0..n).filter(|&j| x[j]).map(|j| c0[j]).sum();
        best = best.min(nominal + gains.iter().take(k).sum::<f64>());
    }
    best
}

fn budget_case(seed: u64, n: usize, m: usize, k: usize) -> (SetCoverInstance, UncertaintySet) {
    let inst = random_instance(seed, n, m, 0.35, (0.5, 4.0));
    let mut rng = seeded(seed.wrapping_add(17));
    let u = random_budget(&mut rng, inst.cost(), 1.5, 0.8, k as f64);
    (inst, u)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn oracle_matches_full_scan(seed in any::<u64>(), n in 1usize..=10, m in 1usize..=6, k in 0usize..=3) {
        let (inst, u) = budget_case(seed, n, m, k);
        let UncertaintySet::PolyhedralDirect { d, .. } = &u else { unreachable!() };
        let oracle = exact_robust_opt(&inst, &u).unwrap();
        prop_assert!((oracle.opt_r - budget_opt_by_scan(&inst, u.c0(), d, k)).abs() <= 1e-8);
        prop_assert!(inst.is_feasible(&oracle.argmin.0).unwrap());
        prop_assert!((robust_objective(&u, &oracle.argmin).unwrap() - oracle.opt_r).abs() <= 1e-8);
    }

    #[test]
    fn relaxation_ordering(seed in any::<u64>(), n in 1usize..=10, m in 1usize..=6, k in 0usize..=3) {
        let (inst, u) = budget_case(seed, n, m, k);
        let nominal = solve_lp(&inst.lp_relaxation(inst.cost()), &Default::default()).unwrap().objective;
        let cg = solve_robust_relaxation(&inst, &u, RelaxationMethod::ConstraintGeneration, &Default::default()).unwrap();
        let dr = solve_robust_relaxation(&inst, &u, RelaxationMethod::DualReformulation, &Default::default()).unwrap();
        let opt = exact_robust_opt(&inst, &u).unwrap().opt_r;
        prop_assert!(nominal <= dr.z_r + 1e-7);
        prop_assert!(dr.z_r <= opt + 1e-6);
        prop_assert!((cg.z_r - dr.z_r).abs() <= 1e-5 * (1.0 + dr.z_r.abs()), "cg {} dr {}", cg.z_r, dr.z_r);
    }

    #[test]
    fn deterministic_budget_algorithms_are_sound(seed in any::<u64>(), n in 2usize..=10, m in 2usize..=6) {
        let (inst, u) = budget_case(seed, n, m, 2);
        let oracle = exact_robust_opt(&inst, &u).unwrap();
        let cfg = ReductionConfig { rng_seed: seed, ..Default::default() };
        for alg in [Algorithm::Budget, Algorithm::DualFit] {
            let s = alg.run(&inst, &u, &GreedyVerifier, &cfg).unwrap();
            prop_assert!(inst.is_feasible(&s.x_hat.0).unwrap());
            prop_assert!(verdict(&s, &oracle).unwrap().pass, "{:?} ratio {}", alg, s.robust_objective / oracle.opt_r);
        }
    }

    #[test]
    fn budget_score_bounds_objective(seed in any::<u64>(), n in 2usize..=10, m in 2usize..=6, k in 1usize..=3) {
        let (inst, u) = budget_case(seed, n, m, k);
        let s = budget_enumerate(&inst, &u, &GreedyVerifier, &Default::default()).unwrap();
        if let Some(score) = s.trace.get("score").and_then(|v| v.as_f64()) {
            prop_assert!(score >= s.robust_objective - 1e-7 * (1.0 + score));
            prop_assert!(s.trace["guesses"].as_f64().unwrap() <= s.trace["guess_bound"].as_f64().unwrap());
        }
    }

    #[test]
    fn dual_fit_selection_score(seed in any::<u64>(), n in 2usize..=10, m in 2usize..=6) {
        let (inst, u) = budget_case(seed, n, m, 2);
        let s = covering_dual_fit(&inst, &u, &GreedyVerifier, &Default::default()).unwrap();
        let alpha = GreedyVerifier.spec(&inst).alpha;
        let chosen = s.trace["selection_score"].as_f64().unwrap();
        let star = s.trace["x_star_score"].as_f64().unwrap();
        prop_assert!(chosen <= alpha * star + 1e-6);
        for j in s.trace["forced"].as_array().unwrap() {
            prop_assert!(s.x_hat.0[j.as_u64().unwrap() as usize]);
        }
    }

    #[test]
    fn expectation_mixture_is_sound(seed in any::<u64>(), n in 2usize..=9, m in 2usize..=6) {
        let (inst, u) = budget_case(seed, n, m, 2);
        let oracle = exact_robust_opt(&inst, &u).unwrap();
        let s = Algorithm::Expectation.run(&inst, &u, &GreedyVerifier, &Default::default()).unwrap();
        let d = s.decomposition().unwrap();
        let worst = mixture_worst_case(&d, &u).unwrap();
        prop_assert!(worst <= s.claimed_factor * s.z_r().unwrap() + 1e-6);
        prop_assert!(worst <= s.claimed_factor * oracle.opt_r + 1e-6);
    }

    #[test]
    fn ellipsoid_decomposition_is_sound(seed in any::<u64>(), n in 2usize..=9, m in 2usize..=6, k in 1usize..=4) {
        let inst = random_instance(seed, n, m, 0.35, (0.5, 4.0));
        let u = random_ellipsoid_affine(&mut seeded(seed ^ 5), inst.cost(), k, 1.5, 3.0, false);
        let oracle = exact_robust_opt(&inst, &u).unwrap();
        let s = Algorithm::EllDecomp.run(&inst, &u, &GreedyVerifier, &Default::default()).unwrap();
        prop_assert!(verdict(&s, &oracle).unwrap().pass);
        prop_assert!(s.z_r().unwrap() <= oracle.opt_r + 1e-6);
    }
}

#[test]
fn zero_generator_branch_has_no_perturbation() {
    // Set 0 is the only perturbed set and sets 1..n cover everything.
    for seed in 0..10 {
        let base = random_instance(seed, 6, 5, 0.4, (0.5, 2.0));
        let mut sets = base.sets().to_vec();
        sets.push((0..5).collect());
        let mut cost = base.cost().to_vec();
        cost.push(0.5);
        let inst = SetCoverInstance::new(5, sets, cost).unwrap();
        let mut c = vec![vec![0.0; 2]; 7];
        c[0] = vec![1.0, 2.0];
        c[3] = vec![0.5, 0.0];
        let u = UncertaintySet::PolyhedralAffine { c0: inst.cost().to_vec(), c, a: vec![vec![1.0, 1.0]], b: vec![1.0] };
        let s = polyhedral_whp(&inst, &u, &AncrrVerifier, &Default::default()).unwrap();
        if s.trace["branch"] == "zero_generator" {
            let wc = robustkit::worst_case(&u, &s.x_hat.to_f64()).unwrap();
            assert_eq!(wc.value, 0.0);
        }
        let avoid = IntegralSolution::from_support(7, &[6]);
        assert!(s.robust_objective <= robust_objective(&u, &avoid).unwrap() + 1e-9);
    }
}

#[test]
fn whp_outputs_are_feasible() {
    for seed in 0..10 {
        let inst = random_instance(seed, 8, 5, 0.35, (0.5, 4.0));
        let u = random_poly_affine(&mut seeded(seed), inst.cost(), 3, 2, 1.0);
        let s = Algorithm::PolyWhp
            .run(&inst, &u, &AncrrVerifier, &ReductionConfig { rng_seed: seed, ..Default::default() })
            .unwrap();
        assert!(inst.is_feasible(&s.x_hat.0).unwrap());
        assert!(s.claimed_factor >= AncrrVerifier.spec(&inst).alpha);
    }
}
