//! Convex decompositions of scaled fractional points into integral solutions.
//!
//! Given `x* ∈ Q` and a verifier with factor `α`, column generation finds
//! members `x¹..x^t` and weights `μ` with `Σ μ_i x^i ≤ α x*` coordinatewise.
//! The pricing step is one verifier call with the master's duals as cost.

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{IntegralSolution, NominalProblem};
use crate::lp::{solve_lp, LpError, LpProblem, LpStatus, RowSense, SolverTolerances};
use crate::verifiers::{amplify, Verifier, VerifierError, VerifierKind};

/// Master target: stop once the violation `s` is at most this.
pub const SLACK_TOL: f64 = 1e-7;
/// A priced column must have reduced cost below `−REDUCED_COST_TOL`.
pub const REDUCED_COST_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("decomposition stalled with violation {slack:e} after {iterations} columns")]
    StalledDecomposition { slack: f64, iterations: usize },
    #[error("expected a point of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("verifier returned a non-member")]
    InvalidAtom,
    #[error("restricted master LP ended with status {0:?}")]
    MasterNotOptimal(LpStatus),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexDecomposition {
    #[serde(rename = "alpha")]
    pub alpha_used: f64,
    pub atoms: Vec<IntegralSolution>,
    pub weights: Vec<f64>,
    pub slack: f64,
}

impl ConvexDecomposition {
    /// `Σ μ_i x^i`.
    pub fn mixture(&self) -> Vec<f64> {
        let n = self.atoms.first().map_or(0, IntegralSolution::len);
        let mut m = vec![0.0; n];
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            for j in atom.support() {
                m[j] += w;
            }
        }
        m
    }

    /// `max_j (Σ μ_i x^i_j − α x*_j)`.
    pub fn domination_gap(&self, x_star: &[f64]) -> f64 {
        self.mixture()
            .iter()
            .zip(x_star)
            .map(|(m, x)| m - self.alpha_used * x)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ μ_i (c·x^i)`.
    pub fn expected_cost(&self, cost: &[f64]) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| w * a.cost(cost)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionOptions {
    pub lp: SolverTolerances,
    /// Column cap is `max(cap_per_var · n, cap_per_var)`.
    pub cap_per_var: usize,
    /// Amplification used when the verifier is randomized.
    pub amplify_epsilon: f64,
    pub amplify_trials: usize,
}

impl Default for DecompositionOptions {
    fn default() -> Self {
        Self { lp: SolverTolerances::default(), cap_per_var: 50, amplify_epsilon: 0.05, amplify_trials: 64 }
    }
}

fn is_integral(x: &[f64]) -> Option<IntegralSolution> {
    x.iter()
        .map(|&v| {
            if v.abs() <= 1e-9 {
                Some(false)
            } else if (v - 1.0).abs() <= 1e-9 {
                Some(true)
            } else {
                None
            }
        })
        .collect::<Option<Vec<bool>>>()
        .map(IntegralSolution)
}

pub fn decompose<P, V>(
    problem: &P,
    verifier: &V,
    alpha: f64,
    x_star: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ConvexDecomposition, DecompositionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    decompose_with(problem, verifier, alpha, x_star, rng, &DecompositionOptions::default())
}

pub fn decompose_with<P, V>(
    problem: &P,
    verifier: &V,
    alpha: f64,
    x_star: &[f64],
    rng: &mut ChaCha8Rng,
    opts: &DecompositionOptions,
) -> Result<ConvexDecomposition, DecompositionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    let n = problem.num_vars();
    if x_star.len() != n {
        return Err(DecompositionError::LengthMismatch { expected: n, got: x_star.len() });
    }
    if let Some(x) = is_integral(x_star) {
        if problem.is_member(&x) {
            let mut d = ConvexDecomposition { alpha_used: alpha, atoms: vec![x], weights: vec![1.0], slack: 0.0 };
            d.slack = d.domination_gap(x_star).max(0.0);
            return Ok(d);
        }
    }
    let randomized = verifier.spec(problem).kind == VerifierKind::Ancrr;
    let price = |cost: &[f64], rng: &mut ChaCha8Rng| -> Result<IntegralSolution, DecompositionError> {
        let x = if randomized {
            amplify(verifier, problem, cost, x_star, opts.amplify_epsilon, opts.amplify_trials, rng)?
        } else {
            verifier.verify(problem, cost, x_star, rng)?
        };
        if !problem.is_member(&x) {
            return Err(DecompositionError::InvalidAtom);
        }
        Ok(x)
    };

    // Master over (s, μ_1, μ_2, …): min s, Σ_a μ_a a_j − s ≤ α x*_j, Σ μ = 1.
    let mut master = LpProblem::minimize(vec![1.0]);
    master.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
    for &xj in x_star {
        master.add_row(vec![-1.0], RowSense::Le, alpha * xj);
    }
    let convexity = master.add_row(vec![0.0], RowSense::Eq, 1.0);
    let mut atoms: Vec<IntegralSolution> = Vec::new();
    let add_atom = |master: &mut LpProblem, atom: &IntegralSolution| {
        let mut col = atom.to_f64();
        col.push(1.0);
        master.add_column(0.0, 0.0, f64::INFINITY, &col);
    };

    let first = price(&vec![1.0 / n as f64; n], rng)?;
    add_atom(&mut master, &first);
    atoms.push(first);

    let cap = (opts.cap_per_var * n).max(opts.cap_per_var);
    loop {
        let sol = solve_lp(&master, &opts.lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(DecompositionError::MasterNotOptimal(sol.status));
        }
        let s = sol.primal[0];
        if s <= SLACK_TOL {
            return Ok(finish(alpha, atoms, &sol.primal[1..], x_star));
        }
        if atoms.len() >= cap {
            return Err(DecompositionError::StalledDecomposition { slack: s, iterations: atoms.len() });
        }
        let w: Vec<f64> = sol.dual[..n].iter().map(|y| (-y).max(0.0)).collect();
        let pi = sol.dual[convexity];
        let atom = price(&w, rng)?;
        let reduced = atom.to_f64().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - pi;
        if reduced >= -REDUCED_COST_TOL {
            return Err(DecompositionError::StalledDecomposition { slack: s, iterations: atoms.len() });
        }
        add_atom(&mut master, &atom);
        atoms.push(atom);
    }
}

fn finish(alpha: f64, atoms: Vec<IntegralSolution>, mu: &[f64], x_star: &[f64]) -> ConvexDecomposition {
    let clipped: Vec<f64> = mu.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let mut kept_atoms = Vec::new();
    let mut weights = Vec::new();
    for (atom, &w) in atoms.into_iter().zip(&clipped) {
        if w / total > 1e-12 {
            kept_atoms.push(atom);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut d = ConvexDecomposition { alpha_used: alpha, atoms: kept_atoms, weights, slack: 0.0 };
    d.slack = d.domination_gap(x_star).max(0.0);
    d
}

/// Draws one atom with probability equal to its weight.
pub fn sample(decomposition: &ConvexDecomposition, rng: &mut ChaCha8Rng) -> IntegralSolution {
    let dist = WeightedIndex::new(&decomposition.weights).expect("weights are a probability vector");
    decomposition.atoms[dist.sample(rng)].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::SetCoverInstance;
    use crate::rng::seeded;
    use crate::verifiers::{harmonic, AncrrVerifier, GreedyVerifier};
    use approx::assert_abs_diff_eq;

    #[test]
    fn integral_point_is_its_own_decomposition() {
        let t = SetCoverInstance::new(2, vec![vec![0], vec![1], vec![0, 1]], vec![1.0, 1.0, 1.5]).unwrap();
        let d = decompose(&t, &GreedyVerifier, 1.5, &[0.0, 0.0, 1.0], &mut seeded(0)).unwrap();
        assert_eq!(d.atoms, vec![IntegralSolution(vec![false, false, true])]);
        assert_eq!(d.weights, vec![1.0]);
        assert_eq!(d.slack, 0.0);
    }

    #[test]
    fn two_parallel_sets() {
        let t = SetCoverInstance::new(1, vec![vec![0], vec![0]], vec![1.0, 2.0]).unwrap();
        let d = decompose(&t, &GreedyVerifier, harmonic(1), &[0.5, 0.5], &mut seeded(0)).unwrap();
        let mut pairs: Vec<(Vec<usize>, f64)> = d.atoms.iter().map(|a| a.support()).zip(d.weights.clone()).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, vec![0]);
        assert_eq!(pairs[1].0, vec![1]);
        assert_abs_diff_eq!(pairs[0].1, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(pairs[1].1, 0.5, epsilon = 1e-9);
        assert!(d.slack <= 1e-7);
    }

    #[test]
    fn undersized_alpha_stalls() {
        let t = SetCoverInstance::new(1, vec![vec![0], vec![0]], vec![1.0, 2.0]).unwrap();
        let err = decompose(&t, &GreedyVerifier, 0.5, &[0.5, 0.5], &mut seeded(0)).unwrap_err();
        assert!(matches!(err, DecompositionError::StalledDecomposition { .. }));
    }

    #[test]
    fn randomized_verifier_decomposes() {
        let t = SetCoverInstance::new(3, vec![vec![0, 1], vec![1, 2], vec![0, 2]], vec![1.0, 1.0, 1.0]).unwrap();
        let alpha = AncrrVerifier.spec(&t).alpha;
        let d = decompose(&t, &AncrrVerifier, alpha, &[0.5, 0.5, 0.5], &mut seeded(4)).unwrap();
        assert!(d.slack <= 1e-7);
        assert_abs_diff_eq!(d.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sampling_frequencies() {
        let a = IntegralSolution(vec![true, false]);
        let b = IntegralSolution(vec![false, true]);
        let single = ConvexDecomposition { alpha_used: 1.0, atoms: vec![a.clone()], weights: vec![1.0], slack: 0.0 };
        let mut rng = seeded(11);
        assert!((0..100).all(|_| sample(&single, &mut rng) == a));

        let never = ConvexDecomposition {
            alpha_used: 1.0,
            atoms: vec![a.clone(), b.clone()],
            weights: vec![1.0, 0.0],
            slack: 0.0,
        };
        assert!((0..1000).all(|_| sample(&never, &mut rng) == a));

        let half = ConvexDecomposition { alpha_used: 1.0, atoms: vec![a.clone(), b], weights: vec![0.5, 0.5], slack: 0.0 };
        let draws = 10_000;
        let hits = (0..draws).filter(|_| sample(&half, &mut rng) == a).count() as f64 / draws as f64;
        let stderr = (0.25 / draws as f64).sqrt();
        assert!((hits - 0.5).abs() <= 3.0 * stderr);
    }

    #[test]
    fn json_shape() {
        let d = ConvexDecomposition {
            alpha_used: 1.5,
            atoms: vec![IntegralSolution(vec![true, false])],
            weights: vec![1.0],
            slack: 0.0,
        };
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"alpha":1.5,"atoms":[[1,0]],"weights":[1.0],"slack":0.0}"#);
    }
}
