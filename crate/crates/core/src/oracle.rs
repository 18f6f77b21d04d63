//! Exact robust optima by enumeration, exact mixture expectations and
//! guarantee verdicts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::ConvexDecomposition;
use crate::instances::{IntegralSolution, NominalProblem};
use crate::lp::dot;
use crate::reductions::RobustSolution;
use crate::uncertainty::{worst_case, UncertaintyError, UncertaintySet};

pub const MAX_ORACLE_DIM: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("exact enumeration supports n ≤ {max}, got {n}")]
    DimensionTooLarge { n: usize, max: usize },
    #[error("the instance has no feasible solution")]
    NoFeasibleSolution,
    #[error("solution has {got} variables, oracle result has {expected}")]
    MismatchedInstance { expected: usize, got: usize },
    #[error("robust optimum {0} is not positive")]
    ZeroOptimum(f64),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub opt_r: f64,
    pub argmin: IntegralSolution,
    /// Number of candidates whose worst case was evaluated.
    pub evaluated_count: usize,
}

fn from_mask(n: usize, mask: u32) -> IntegralSolution {
    IntegralSolution((0..n).map(|j| mask >> j & 1 == 1).collect())
}

/// Minimal members of `S`: feasible and infeasible after dropping any one coordinate.
fn is_minimal_member<P: NominalProblem + ?Sized>(problem: &P, x: &IntegralSolution) -> bool {
    if !problem.is_member(x) {
        return false;
    }
    let mut y = x.clone();
    for j in x.support() {
        y.0[j] = false;
        let still = problem.is_member(&y);
        y.0[j] = true;
        if still {
            return false;
        }
    }
    true
}

/// `OPT_R = min_{x∈S} c0·x + z*(x)` by enumeration of `{0,1}^n`.
///
/// Only minimal members of `S` are evaluated. This is exact for covering
/// problems because `c0 ≥ 0` and `z*` is monotone in `x`. Ties go to the
/// lexicographically smallest `x` (as a bit vector with `x_0` first).
pub fn exact_robust_opt<P: NominalProblem + ?Sized>(
    problem: &P,
    u: &UncertaintySet,
) -> Result<OracleResult, OracleError> {
    let n = problem.num_vars();
    if n > MAX_ORACLE_DIM {
        return Err(OracleError::DimensionTooLarge { n, max: MAX_ORACLE_DIM });
    }
    if u.dim() != n {
        return Err(OracleError::Uncertainty(UncertaintyError::DimensionMismatch(format!(
            "set has dimension {}, problem has {n} variables",
            u.dim()
        ))));
    }
    let c0 = u.c0();
    let evaluated: Vec<(f64, IntegralSolution)> = (1u32..1 << n)
        .into_par_iter()
        .filter_map(|mask| {
            let x = from_mask(n, mask);
            is_minimal_member(problem, &x).then_some(x)
        })
        .map(|x| {
            let xf = x.to_f64();
            let value = dot(c0, &xf) + worst_case(u, &xf)?.value;
            Ok((value, x))
        })
        .collect::<Result<_, UncertaintyError>>()?;
    let evaluated_count = evaluated.len();
    let (opt_r, argmin) = evaluated
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1 .0.cmp(&b.1 .0)))
        .ok_or(OracleError::NoFeasibleSolution)?;
    Ok(OracleResult { opt_r, argmin, evaluated_count })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureProbe {
    pub c: Vec<f64>,
    pub expectation: f64,
}

pub const RANDOM_PROBES: usize = 20;

/// `Σ μ_x c·x` for every probe `c`: the given scenarios plus
/// [`RANDOM_PROBES`] boundary points of `C`, each the maximizer of a random
/// nonnegative direction.
pub fn mixture_expectation(
    decomposition: &ConvexDecomposition,
    u: &UncertaintySet,
    scenarios: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MixtureProbe>, UncertaintyError> {
    let n = u.dim();
    let mut probes: Vec<Vec<f64>> = scenarios.to_vec();
    for _ in 0..RANDOM_PROBES {
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        probes.push(worst_case(u, &w)?.witness_c);
    }
    Ok(probes
        .into_iter()
        .map(|c| {
            let expectation = decomposition.expected_cost(&c);
            MixtureProbe { c, expectation }
        })
        .collect())
}

/// `max_{c∈C} Σ μ_x c·x`, which equals `c0·x̄ + z*(x̄)` at the mixture mean `x̄`.
pub fn mixture_worst_case(decomposition: &ConvexDecomposition, u: &UncertaintySet) -> Result<f64, UncertaintyError> {
    let mean = decomposition.mixture();
    Ok(dot(u.c0(), &mean) + worst_case(u, &mean)?.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeVerdict {
    pub ratio: f64,
    pub pass: bool,
}

pub const VERDICT_TOL: f64 = 1e-9;

/// `ratio = robust_objective / opt_r`; passes iff `ratio ≤ claimed_factor + 1e-9`.
pub fn verdict(solution: &RobustSolution, oracle: &OracleResult) -> Result<GuaranteeVerdict, OracleError> {
    if solution.x_hat.len() != oracle.argmin.len() {
        return Err(OracleError::MismatchedInstance { expected: oracle.argmin.len(), got: solution.x_hat.len() });
    }
    if !(oracle.opt_r > 1e-12) {
        return Err(OracleError::ZeroOptimum(oracle.opt_r));
    }
    let ratio = solution.robust_objective / oracle.opt_r;
    Ok(GuaranteeVerdict { ratio, pass: ratio <= solution.claimed_factor + VERDICT_TOL })
}
