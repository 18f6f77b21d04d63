use proptest::prelude::*;
use rand::Rng;
use robustkit::lp::solve_lp;
use robustkit::rng::{seeded, stream};
use robustkit::{decompose, random_instance, sample, AncrrVerifier, GreedyVerifier, SetCoverInstance, Verifier};

fn lp_optimum(inst: &SetCoverInstance, cost: &[f64]) -> Vec<f64> {
    let sol = solve_lp(&inst.lp_relaxation(cost), &Default::default()).unwrap();
    sol.primal.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn check<V: Verifier<SetCoverInstance>>(inst: &SetCoverInstance, verifier: &V, x: &[f64], seed: u64) -> Result<(), TestCaseError> {
    let alpha = verifier.spec(inst).alpha;
    let d = decompose(inst, verifier, alpha, x, &mut seeded(seed)).unwrap();
    let total: f64 = d.weights.iter().sum();
    prop_assert!((total - 1.0).abs() <= 1e-9);
    prop_assert!(d.weights.iter().all(|&w| w > 0.0));
    prop_assert!(d.domination_gap(x) <= 1e-7, "gap {}", d.domination_gap(x));
    prop_assert!(d.atoms.iter().all(|a| inst.is_feasible(&a.0).unwrap()));
    let mut rng = stream(seed, 77);
    for _ in 0..20 {
        let c: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(0.0..5.0)).collect();
        let bound: f64 = alpha * c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let expected = d.expected_cost(&c);
        prop_assert!(expected <= bound + 1e-6 * bound.max(1.0), "{expected} > {bound}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_decompositions_dominate(seed in any::<u64>(), n in 2usize..=10, m in 2usize..=7) {
        let inst = random_instance(seed, n, m, 0.35, (0.5, 4.0));
        let mut rng = seeded(seed ^ 1);
        let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        check(&inst, &GreedyVerifier, &lp_optimum(&inst, &cost), seed)?;
    }

    #[test]
    fn ancrr_decompositions_dominate(seed in any::<u64>(), n in 2usize..=8, m in 2usize..=6) {
        let inst = random_instance(seed, n, m, 0.35, (0.5, 4.0));
        check(&inst, &AncrrVerifier, &lp_optimum(&inst, inst.cost()), seed)?;
    }
}

#[test]
fn sampled_frequencies_follow_weights() {
    let inst = random_instance(11, 8, 6, 0.35, (0.5, 4.0));
    let mut rng = seeded(2);
    let cost: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..3.0)).collect();
    let x = lp_optimum(&inst, &cost);
    let alpha = GreedyVerifier.spec(&inst).alpha;
    let d = decompose(&inst, &GreedyVerifier, alpha, &x, &mut seeded(3)).unwrap();
    let draws = 20_000;
    let mut rng = stream(3, 5);
    let mut counts = vec![0usize; d.atoms.len()];
    for _ in 0..draws {
        let s = sample(&d, &mut rng);
        counts[d.atoms.iter().position(|a| *a == s).unwrap()] += 1;
    }
    for (c, w) in counts.iter().zip(&d.weights) {
        let f = *c as f64 / draws as f64;
        assert!((f - w).abs() <= 4.0 * (w * (1.0 - w) / draws as f64).sqrt() + 1e-3);
    }
}

#[test]
fn fractional_points_need_several_atoms() {
    // Three elements, each covered by two of three sets: x* = (1/2, 1/2, 1/2).
    let inst = SetCoverInstance::new(3, vec![vec![0, 1], vec![1, 2], vec![0, 2]], vec![1.0; 3]).unwrap();
    let x = lp_optimum(&inst, inst.cost());
    assert!(x.iter().all(|&v| (v - 0.5).abs() < 1e-9));
    let alpha = GreedyVerifier.spec(&inst).alpha;
    let d = decompose(&inst, &GreedyVerifier, alpha, &x, &mut seeded(0)).unwrap();
    assert!(d.atoms.len() >= 2);
    assert!(d.domination_gap(&x) <= 1e-7);
}
