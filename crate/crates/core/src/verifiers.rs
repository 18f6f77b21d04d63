//! Integrality-gap verifiers for set cover.
//!
//! A verifier maps a fractional point of the LP relaxation to a member of the
//! feasible family whose cost is at most `alpha` times the fractional cost.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{IntegralSolution, NominalProblem, SetCoverInstance};

/// Tolerance on covering rows when checking a fractional input.
pub const INPUT_FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error("fractional input leaves element {element} short by {shortfall:e}")]
    InfeasibleInput { element: usize, shortfall: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cost vector has a negative or NaN entry at {0}")]
    InvalidCost(usize),
    #[error("verifier produced no feasible solution")]
    NoCandidate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifierKind {
    Deterministic,
    Ancrr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveClass {
    AllNonnegative,
    Restricted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub alpha: f64,
    pub kind: VerifierKind,
    pub objective_class: ObjectiveClass,
}

/// An integrality-gap verifier for problem type `P`.
///
/// `cost` may contain `f64::INFINITY` for coordinates that must stay at zero
/// unless nothing else works.
pub trait Verifier<P: NominalProblem + ?Sized>: Sync {
    fn spec(&self, problem: &P) -> VerifierSpec;

    fn verify(
        &self,
        problem: &P,
        cost: &[f64],
        x_frac: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<IntegralSolution, VerifierError>;

    fn name(&self) -> &'static str;
}

/// `H_m = Σ_{i=1}^m 1/i`.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

fn check_inputs(instance: &SetCoverInstance, cost: &[f64], x_frac: &[f64]) -> Result<(), VerifierError> {
    let n = instance.num_sets();
    for v in [cost.len(), x_frac.len()] {
        if v != n {
            return Err(VerifierError::LengthMismatch { expected: n, got: v });
        }
    }
    if let Some(j) = cost.iter().position(|c| !(*c >= 0.0)) {
        return Err(VerifierError::InvalidCost(j));
    }
    let (element, shortfall) = instance.max_cover_violation(x_frac);
    if shortfall > INPUT_FEAS_TOL {
        return Err(VerifierError::InfeasibleInput { element, shortfall });
    }
    Ok(())
}

/// Greedy set cover: repeatedly take the set with the smallest cost per newly
/// covered element, smallest index on ties. The result depends on `cost` only;
/// `x_frac` is checked for LP feasibility.
pub fn greedy_verify(
    instance: &SetCoverInstance,
    cost: &[f64],
    x_frac: &[f64],
) -> Result<IntegralSolution, VerifierError> {
    check_inputs(instance, cost, x_frac)?;
    Ok(greedy_cover(instance, cost))
}

fn greedy_cover(instance: &SetCoverInstance, cost: &[f64]) -> IntegralSolution {
    let m = instance.universe_size();
    let mut covered = vec![false; m];
    let mut remaining = m;
    let mut x = IntegralSolution::zeros(instance.num_sets());
    while remaining > 0 {
        let mut best: Option<(usize, usize)> = None;
        for (i, set) in instance.sets().iter().enumerate() {
            if x.0[i] {
                continue;
            }
            let new = set.iter().filter(|&&e| !covered[e]).count();
            if new == 0 {
                continue;
            }
            // cost_i/new_i < cost_b/new_b without dividing.
            let better = match best {
                None => true,
                Some((b, new_b)) => cost[i] * (new_b as f64) < cost[b] * (new as f64),
            };
            if better {
                best = Some((i, new));
            }
        }
        let (i, new) = best.expect("every element is coverable");
        x.0[i] = true;
        for &e in &instance.sets()[i] {
            covered[e] = true;
        }
        remaining -= new;
    }
    x
}

/// Selection probability `min(6·x_i·ln m, 1)`.
pub fn ancrr_probability(x_i: f64, m: usize) -> f64 {
    (6.0 * x_i * (m as f64).ln()).clamp(0.0, 1.0)
}

/// Independent rounding followed by alteration under the nominal cost.
/// Returns the patched solution and the independent pre-alteration draw.
pub fn ancrr_round(
    instance: &SetCoverInstance,
    x_frac: &[f64],
    rng: &mut ChaCha8Rng,
) -> (IntegralSolution, IntegralSolution) {
    let pre = ancrr_draw(instance, x_frac, rng);
    let patched = patch_uncovered(instance, &pre, instance.cost());
    (patched, pre)
}

fn ancrr_draw(instance: &SetCoverInstance, x_frac: &[f64], rng: &mut ChaCha8Rng) -> IntegralSolution {
    let m = instance.universe_size();
    IntegralSolution(
        x_frac
            .iter()
            .map(|&xi| {
                let p = ancrr_probability(xi, m);
                // Always consume one draw per coordinate so streams stay aligned.
                let u: f64 = rng.gen();
                u < p
            })
            .collect(),
    )
}

/// Adds, for every element left uncovered (in index order), its cheapest
/// covering set under `cost`, smallest index on ties.
pub fn patch_uncovered(instance: &SetCoverInstance, x: &IntegralSolution, cost: &[f64]) -> IntegralSolution {
    let mut y = x.clone();
    for e in 0..instance.universe_size() {
        let sets = instance.sets_covering(e);
        if sets.iter().any(|&i| y.0[i]) {
            continue;
        }
        let cheapest = sets
            .iter()
            .copied()
            .reduce(|a, b| if cost[b] < cost[a] { b } else { a })
            .expect("every element is coverable");
        y.0[cheapest] = true;
    }
    y
}

/// Deterministic greedy verifier, `alpha = H_m`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyVerifier;

impl Verifier<SetCoverInstance> for GreedyVerifier {
    fn spec(&self, problem: &SetCoverInstance) -> VerifierSpec {
        VerifierSpec {
            alpha: harmonic(problem.universe_size()),
            kind: VerifierKind::Deterministic,
            objective_class: ObjectiveClass::AllNonnegative,
        }
    }

    fn verify(
        &self,
        problem: &SetCoverInstance,
        cost: &[f64],
        x_frac: &[f64],
        _rng: &mut ChaCha8Rng,
    ) -> Result<IntegralSolution, VerifierError> {
        greedy_verify(problem, cost, x_frac)
    }

    fn name(&self) -> &'static str {
        "greedy"
    }
}

/// Randomized rounding with alteration, `alpha = 6 ln m + 1`.
///
/// Uncovered elements are patched with the cheapest set under the requested
/// cost, which equals [`ancrr_round`] when that cost is the nominal one.
#[derive(Clone, Copy, Debug, Default)]
pub struct AncrrVerifier;

impl Verifier<SetCoverInstance> for AncrrVerifier {
    fn spec(&self, problem: &SetCoverInstance) -> VerifierSpec {
        VerifierSpec {
            alpha: 6.0 * (problem.universe_size() as f64).ln() + 1.0,
            kind: VerifierKind::Ancrr,
            objective_class: ObjectiveClass::AllNonnegative,
        }
    }

    fn verify(
        &self,
        problem: &SetCoverInstance,
        cost: &[f64],
        x_frac: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<IntegralSolution, VerifierError> {
        check_inputs(problem, cost, x_frac)?;
        let pre = ancrr_draw(problem, x_frac, rng);
        Ok(patch_uncovered(problem, &pre, cost))
    }

    fn name(&self) -> &'static str {
        "ancrr"
    }
}

/// Repetitions needed so that the best of them is within `(1+ε)` of the
/// expectation bound with probability 0.99.
pub fn required_trials(epsilon: f64) -> usize {
    (100f64.ln() / (1.0 + epsilon).ln()).ceil() as usize
}

/// Cheapest of `trials` independent calls, first on ties. A deterministic
/// verifier is called once.
pub fn amplify<P, V>(
    verifier: &V,
    problem: &P,
    cost: &[f64],
    x_frac: &[f64],
    _epsilon: f64,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<IntegralSolution, VerifierError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    let trials = match verifier.spec(problem).kind {
        VerifierKind::Deterministic => 1,
        VerifierKind::Ancrr => trials.max(1),
    };
    let mut best: Option<(f64, IntegralSolution)> = None;
    for _ in 0..trials {
        let x = verifier.verify(problem, cost, x_frac, rng)?;
        let c = x.cost(cost);
        if best.as_ref().map_or(true, |(b, _)| c < *b) {
            best = Some((c, x));
        }
    }
    best.map(|(_, x)| x).ok_or(VerifierError::NoCandidate)
}
