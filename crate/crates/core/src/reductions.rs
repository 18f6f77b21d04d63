//! Robust approximation algorithms built from a nominal verifier.
//!
//! Every algorithm returns a [`RobustSolution`] whose `robust_objective` is
//! recomputed from scratch with [`worst_case`], never taken from an internal
//! bound.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::decomposition::{decompose_with, sample, ConvexDecomposition, DecompositionError, DecompositionOptions};
use crate::instances::{IntegralSolution, NominalProblem};
use crate::lp::{dot, solve_lp, LpError, LpStatus};
use crate::relaxation::{
    default_method, solve_robust_relaxation, RelaxationError, RelaxationMethod, RelaxationResult, RelaxationTolerances,
};
use crate::rng::stream;
use crate::uncertainty::{
    normalize, to_dmatrix, width_params, worst_case, UncertaintyError, UncertaintySet, WidthParams,
};
use crate::verifiers::{amplify, required_trials, Verifier, VerifierError, VerifierKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("algorithm needs set type {expected}, got {got}")]
    VariantMismatch { expected: &'static str, got: &'static str },
    #[error("guess grid has {required} points, cap is {cap}")]
    GridCapExceeded { required: u128, cap: u128 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no candidate solution was produced")]
    NoCandidate,
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuaranteeKind {
    Expectation,
    WithHighProbability,
    Deterministic,
}

pub type Trace = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustSolution {
    #[serde(rename = "x")]
    pub x_hat: IntegralSolution,
    #[serde(rename = "kind")]
    pub guarantee_kind: GuaranteeKind,
    pub claimed_factor: f64,
    pub robust_objective: f64,
    pub trace: Trace,
}

impl RobustSolution {
    /// The decomposition recorded by decomposition-based algorithms.
    pub fn decomposition(&self) -> Option<ConvexDecomposition> {
        self.trace.get("decomposition").and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    /// Relaxation value recorded in the trace.
    pub fn z_r(&self) -> Option<f64> {
        self.trace.get("z_r").and_then(Value::as_f64)
    }

    /// The fractional point that was decomposed, when there is one.
    pub fn x_star(&self) -> Option<Vec<f64>> {
        self.trace.get("x_star").and_then(|v| serde_json::from_value(v.clone()).ok())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReductionConfig {
    pub epsilon: f64,
    pub whp_repeats: usize,
    pub rng_seed: u64,
    /// Largest guess grid `budget_enumerate` will evaluate.
    pub max_guesses: u128,
    pub relaxation: RelaxationTolerances,
    pub decomposition: DecompositionOptions,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            whp_repeats: 16,
            rng_seed: 0,
            max_guesses: 1_000_000,
            relaxation: RelaxationTolerances::default(),
            decomposition: DecompositionOptions::default(),
        }
    }
}

impl ReductionConfig {
    fn validate(&self) -> Result<(), ReductionError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ReductionError::InvalidConfig(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        if self.whp_repeats == 0 || self.max_guesses == 0 {
            return Err(ReductionError::InvalidConfig("repeats and caps must be at least 1".into()));
        }
        Ok(())
    }
}

// Stream ids for the per-algorithm random streams.
const STREAM_DECOMPOSE: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_NOMINAL: u64 = 3;
const STREAM_REPEAT: u64 = 1 << 20;
const STREAM_GRID: u64 = 1 << 40;

/// `c0·x + z*(x)`.
pub fn robust_objective(u: &UncertaintySet, x: &IntegralSolution) -> Result<f64, UncertaintyError> {
    let xf = x.to_f64();
    Ok(dot(u.c0(), &xf) + worst_case(u, &xf)?.value)
}

fn solution(
    u: &UncertaintySet,
    x_hat: IntegralSolution,
    kind: GuaranteeKind,
    claimed_factor: f64,
    trace: Trace,
) -> Result<RobustSolution, ReductionError> {
    let robust_objective = robust_objective(u, &x_hat)?;
    Ok(RobustSolution { x_hat, guarantee_kind: kind, claimed_factor, robust_objective, trace })
}

fn relax<P: NominalProblem + ?Sized>(
    problem: &P,
    u: &UncertaintySet,
    config: &ReductionConfig,
) -> Result<RelaxationResult, ReductionError> {
    Ok(solve_robust_relaxation(problem, u, default_method(u), &config.relaxation)?)
}

fn decompose_point<P, V>(
    problem: &P,
    verifier: &V,
    alpha: f64,
    x_star: &[f64],
    config: &ReductionConfig,
) -> Result<ConvexDecomposition, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    let mut rng = stream(config.rng_seed, STREAM_DECOMPOSE);
    Ok(decompose_with(problem, verifier, alpha, x_star, &mut rng, &config.decomposition)?)
}

fn check_dims<P: NominalProblem + ?Sized>(problem: &P, u: &UncertaintySet) -> Result<(), ReductionError> {
    if problem.num_vars() != u.dim() {
        return Err(ReductionError::PreconditionViolated(format!(
            "problem has {} variables, uncertainty set has dimension {}",
            problem.num_vars(),
            u.dim()
        )));
    }
    Ok(())
}

/// Relaxation, decomposition at the verifier's factor, and one sampled atom.
/// For every fixed `c ∈ C` the expected cost of the output is at most
/// `α·z_R`.
pub fn robust_in_expectation<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let (un, _) = normalize(u)?;
    let alpha = verifier.spec(problem).alpha;
    let relaxation = relax(problem, &un, config)?;
    let decomposition = decompose_point(problem, verifier, alpha, &relaxation.x_star, config)?;
    let x_hat = sample(&decomposition, &mut stream(config.rng_seed, STREAM_SAMPLE));
    let mut trace = Trace::new();
    trace.insert("z_r".into(), json!(relaxation.z_r));
    trace.insert("relaxation_iterations".into(), json!(relaxation.iterations));
    trace.insert("decomposition".into(), serde_json::to_value(&decomposition).expect("serializable"));
    trace.insert("x_star".into(), json!(relaxation.x_star));
    trace.insert("active_scenarios".into(), json!(relaxation.active_scenarios));
    solution(u, x_hat, GuaranteeKind::Expectation, alpha, trace)
}

/// `L(A, c0, d) = n·max{max c0/min c0, (m+n)/ε · max{γ_A/β_A, max d/min d}}`,
/// with `A`, `d` restricted to the active coordinates.
pub fn budget_l_value(a: &[Vec<f64>], c0: &[f64], d: &[f64], epsilon: f64) -> f64 {
    let n = c0.len();
    let m = a.len();
    let active: Vec<usize> = (0..n).filter(|&j| d[j] > 0.0).collect();
    let cmax = c0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cmin = c0.iter().copied().fold(f64::INFINITY, f64::min);
    let col_max: Vec<f64> = active.iter().map(|&j| a.iter().map(|r| r[j]).fold(0.0, f64::max)).collect();
    let beta_a = col_max.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_a = col_max.iter().copied().fold(0.0, f64::max);
    let dmax = active.iter().map(|&j| d[j]).fold(0.0, f64::max);
    let dmin = active.iter().map(|&j| d[j]).fold(f64::INFINITY, f64::min);
    let spread = if active.is_empty() { 1.0 } else { (gamma_a / beta_a).max(dmax / dmin) };
    n as f64 * (cmax / cmin).max((m + n) as f64 / epsilon * spread)
}

/// `(⌈log_{1+ε}(2L)⌉ + 1)·(⌈L'⌉ + 1)^m` with `L' = log_{1+ε}((1+ε)m/ε)`: an
/// explicit bound on the number of guesses `budget_enumerate` evaluates.
pub fn budget_guess_bound(l_value: f64, m: usize, epsilon: f64) -> f64 {
    let base = (1.0 + epsilon).ln();
    let z_count = ((2.0 * l_value).ln() / base).ceil().max(0.0) + 1.0;
    let theta_count = theta_levels(m, epsilon) as f64;
    z_count * theta_count.powi(m as i32)
}

/// Number of grid values per `θ_i`: `⌈log_{1+ε}((1+ε)m/ε)⌉ + 1`.
fn theta_levels(m: usize, epsilon: f64) -> usize {
    if m == 0 {
        return 1;
    }
    ((((1.0 + epsilon) * m as f64 / epsilon).ln() / (1.0 + epsilon).ln()).ceil().max(0.0) as usize) + 1
}

/// Guess enumeration for direct polyhedral sets with at most three rows.
///
/// For each guess `z̃` of the robust optimum on a `(1+ε)`-geometric grid, and
/// each `θ` on a `(1+ε)`-geometric grid starting at `ε z̃/m`, the algorithm
/// solves the nominal LP under `c̃(θ)_j = c̃0_j + d_j·max{1 − a^j·θ, 0}`,
/// rounds it with the verifier and keeps the point with the smallest score
/// `c̃(θ)·x̂ + Σθ`. The score upper-bounds the robust objective of `x̂`.
pub fn budget_enumerate<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let (un, report) = normalize(u)?;
    let UncertaintySet::PolyhedralDirect { c0, d, a, .. } = &un else {
        return Err(ReductionError::VariantMismatch { expected: "poly_direct", got: un.variant_name() });
    };
    let n = problem.num_vars();
    let m = a.len();
    if m > 3 {
        return Err(ReductionError::PreconditionViolated(format!("budget enumeration supports at most 3 rows, got {m}")));
    }
    if let Some(j) = (0..n).find(|&j| d[j].is_infinite()) {
        return Err(ReductionError::PreconditionViolated(format!("coordinate {j} has an infinite cap")));
    }
    let eps = config.epsilon;
    let alpha = verifier.spec(problem).alpha;
    let factor = alpha * (1.0 + 5.0 * eps);
    let active: Vec<usize> = (0..n).filter(|&j| d[j] > 0.0).collect();
    let mut trace = Trace::new();
    trace.insert("epsilon".into(), json!(eps));
    trace.insert("folds".into(), serde_json::to_value(&report).expect("serializable"));

    if active.is_empty() {
        // Zero width: the robust problem is the nominal one.
        let lp = solve_lp(&problem.lp_relaxation(c0), &config.relaxation.lp)?;
        if lp.status != LpStatus::Optimal {
            return Err(RelaxationError::Infeasible.into());
        }
        let mut rng = stream(config.rng_seed, STREAM_NOMINAL);
        let x_hat = verifier.verify(problem, c0, &lp.primal, &mut rng)?;
        trace.insert("zero_width".into(), json!(true));
        trace.insert("guesses".into(), json!(1));
        return solution(u, x_hat, GuaranteeKind::Deterministic, factor, trace);
    }

    let w = width_params(&un)?;
    let (beta, gamma) = (w.beta.expect("active coordinates"), w.gamma.expect("active coordinates"));
    let floor = eps / (gamma * n as f64);
    let c_clip: Vec<f64> = c0.iter().map(|&c| c.max(floor)).collect();
    let cmin = c0.iter().copied().fold(f64::INFINITY, f64::min);
    let cmax = c0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z_lo = cmin.max(floor);
    let z_hi = n as f64 * cmax.max(floor) + (m + n) as f64 / beta;
    let base = 1.0 + eps;
    let z_count = ((z_hi / z_lo).ln() / base.ln()).ceil().max(0.0) as usize + 1;
    let levels = theta_levels(m, eps);
    let per_z = (levels as u128).pow(m as u32);
    let required = z_count as u128 * per_z;
    if required > config.max_guesses {
        return Err(ReductionError::GridCapExceeded { required, cap: config.max_guesses });
    }
    let l_value = budget_l_value(a, &c_clip, d, eps);
    let bound = budget_guess_bound(l_value, m, eps);

    let lp_tol = config.relaxation.lp;
    let evaluate = |idx: u128| -> Result<(f64, u128, IntegralSolution, f64, Vec<f64>), ReductionError> {
        let zk = (idx / per_z) as i32;
        let z_guess = z_lo * base.powi(zk);
        let mut rest = idx % per_z;
        let mut theta = vec![0.0; m];
        for t in theta.iter_mut() {
            let l = (rest % levels as u128) as i32;
            rest /= levels as u128;
            *t = eps * z_guess / m as f64 * base.powi(l);
        }
        let mut cost = c_clip.clone();
        for &j in &active {
            let load: f64 = (0..m).map(|i| a[i][j] * theta[i]).sum();
            cost[j] += d[j] * (1.0 - load).max(0.0);
        }
        let lp = solve_lp(&problem.lp_relaxation(&cost), &lp_tol)?;
        if lp.status != LpStatus::Optimal {
            return Err(RelaxationError::Infeasible.into());
        }
        let mut rng = stream(config.rng_seed, STREAM_GRID + idx as u64);
        let x_hat = verifier.verify(problem, &cost, &lp.primal, &mut rng)?;
        let score = x_hat.cost(&cost) + theta.iter().sum::<f64>();
        Ok((score, idx, x_hat, z_guess, theta))
    };
    let best = (0..required)
        .into_par_iter()
        .map(evaluate)
        .try_reduce_with(|a, b| Ok(if (b.0, b.1) < (a.0, a.1) { b } else { a }))
        .ok_or(ReductionError::NoCandidate)??;
    let (score, _, x_hat, z_guess, theta) = best;
    trace.insert("guesses".into(), json!(required as u64));
    trace.insert("guess_bound".into(), json!(bound));
    trace.insert("l_value".into(), json!(l_value));
    trace.insert("z_guesses".into(), json!(z_count));
    trace.insert("theta_levels".into(), json!(levels));
    trace.insert("chosen_z".into(), json!(z_guess));
    trace.insert("chosen_theta".into(), json!(theta));
    trace.insert("score".into(), json!(score));
    let sol = solution(u, x_hat, GuaranteeKind::Deterministic, factor, trace)?;
    debug_assert!(score >= sol.robust_objective - 1e-7 * (1.0 + score.abs()));
    Ok(sol)
}

/// Bounds `u ≤ d` rewritten as rows `u_j/d_j ≤ 1`, leaving the caps infinite.
fn fold_caps_into_rows(u: &UncertaintySet) -> UncertaintySet {
    match u {
        UncertaintySet::PolyhedralDirect { c0, d, a, b } => {
            let n = c0.len();
            let mut rows = a.clone();
            let mut rhs = b.clone();
            let mut caps = d.clone();
            for j in 0..n {
                if d[j] > 0.0 && d[j].is_finite() {
                    let mut row = vec![0.0; n];
                    row[j] = 1.0 / d[j];
                    rows.push(row);
                    rhs.push(1.0);
                    caps[j] = f64::INFINITY;
                }
            }
            UncertaintySet::PolyhedralDirect { c0: c0.clone(), d: caps, a: rows, b: rhs }
        }
        other => other.clone(),
    }
}

/// Picks the atom minimizing `Σ_{j∉J} c0_j x_j + weight·Σ_{j∉J} x_j` and
/// raises the coordinates in `J` to one.
fn threshold_select<P: NominalProblem + ?Sized>(
    problem: &P,
    c0: &[f64],
    x_star: &[f64],
    decomposition: &ConvexDecomposition,
    tau: f64,
    weight: f64,
    trace: &mut Trace,
) -> IntegralSolution {
    let n = x_star.len();
    let forced: Vec<usize> = (0..n).filter(|&j| x_star[j] >= tau).collect();
    let score = |x: &[f64]| -> f64 {
        (0..n).filter(|j| !forced.contains(j)).map(|j| (c0[j] + weight) * x[j]).sum()
    };
    let scores: Vec<f64> = decomposition.atoms.iter().map(|a| score(&a.to_f64())).collect();
    let pick = (0..scores.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
    trace.insert("tau".into(), json!(tau));
    trace.insert("forced".into(), json!(forced));
    trace.insert("selection_score".into(), json!(scores[pick]));
    trace.insert("x_star_score".into(), json!(score(x_star)));
    trace.insert("decomposition".into(), serde_json::to_value(decomposition).expect("serializable"));
    trace.insert("x_star".into(), json!(x_star));
    problem.round_up(&decomposition.atoms[pick], &forced)
}

/// Dual fitting for covering problems with direct polyhedral uncertainty.
///
/// The relaxation is solved with the caps folded into `A`; coordinates with
/// `x*_j ≥ τ` are forced to one and the rest come from the best atom of a
/// decomposition of `x*`.
pub fn covering_dual_fit<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let (un, _) = normalize(u)?;
    if !matches!(un, UncertaintySet::PolyhedralDirect { .. }) {
        return Err(ReductionError::VariantMismatch { expected: "poly_direct", got: un.variant_name() });
    }
    let folded = fold_caps_into_rows(&un);
    let n = problem.num_vars();
    let alpha = verifier.spec(problem).alpha;
    let w = width_params(&folded)?;
    let (beta, gamma) = (w.beta.unwrap_or(1.0), w.gamma.unwrap_or(1.0));
    let tau = (beta / (alpha * gamma * n as f64)).sqrt();
    let factor = alpha + 2.0 * (alpha * gamma * n as f64 / beta).sqrt();

    let relaxation = solve_robust_relaxation(problem, &folded, RelaxationMethod::DualReformulation, &config.relaxation)?;
    let decomposition = decompose_point(problem, verifier, alpha, &relaxation.x_star, config)?;
    let mut trace = Trace::new();
    trace.insert("z_r".into(), json!(relaxation.z_r));
    trace.insert("beta".into(), json!(beta));
    trace.insert("gamma".into(), json!(gamma));
    let x_hat =
        threshold_select(problem, un.c0(), &relaxation.x_star, &decomposition, tau, 1.0 / beta, &mut trace);
    solution(u, x_hat, GuaranteeKind::Deterministic, factor, trace)
}

/// `(τ, ρ, factor)` of the high-probability analysis for `k ≥ 1` generators.
pub fn whp_parameters(alpha: f64, beta: f64, gamma: f64, c_min: f64, c_max: f64, k: usize, epsilon: f64) -> (f64, f64, f64) {
    let kf = k as f64;
    let log2k = (2.0 * kf).ln();
    let tau = (6.0 * beta * log2k * c_min / ((1.0 + epsilon) * alpha * gamma * c_max * kf)).sqrt();
    let rho = 6.0 * log2k / tau;
    let factor = alpha * ((1.0 + rho) + (1.0 + epsilon) * gamma * tau * c_max * kf / (beta * c_min));
    (tau, rho, factor)
}

/// Coordinates touched by some generator.
fn generator_support(u: &UncertaintySet) -> Vec<usize> {
    match u.generators() {
        Some(c) => (0..u.dim()).filter(|&j| c[j].iter().any(|&v| v > 0.0)).collect(),
        None => (0..u.dim()).collect(),
    }
}

/// Best rounding of the nominal LP restricted to `x_j = 0` on `excluded`,
/// or `None` when that restriction is infeasible.
fn nominal_branch<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    excluded: &[usize],
    config: &ReductionConfig,
) -> Result<Option<IntegralSolution>, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    let mut lp = problem.lp_relaxation(u.c0());
    for &j in excluded {
        lp.set_bounds(j, 0.0, 0.0);
    }
    let sol = solve_lp(&lp, &config.relaxation.lp)?;
    if sol.status != LpStatus::Optimal {
        return Ok(None);
    }
    let mut cost = u.c0().to_vec();
    for &j in excluded {
        cost[j] = f64::INFINITY;
    }
    let mut rng = stream(config.rng_seed, STREAM_NOMINAL);
    let trials = required_trials(config.epsilon);
    let x = amplify(verifier, problem, &cost, &sol.primal, config.epsilon, trials, &mut rng)?;
    Ok(Some(x))
}

/// Best of `whp_repeats` independent roundings of `x_star` by exact robust objective.
fn repeated_rounding<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    x_star: &[f64],
    config: &ReductionConfig,
) -> Result<(IntegralSolution, f64), ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    let mut best: Option<(IntegralSolution, f64)> = None;
    for r in 0..config.whp_repeats {
        let mut rng = stream(config.rng_seed, STREAM_REPEAT + r as u64);
        let x = verifier.verify(problem, u.c0(), x_star, &mut rng)?;
        let v = robust_objective(u, &x)?;
        if best.as_ref().map_or(true, |b| v < b.1) {
            best = Some((x, v));
        }
    }
    best.ok_or(ReductionError::NoCandidate)
}

fn whp_pipeline<P, V>(
    problem: &P,
    u: &UncertaintySet,
    un: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
    widths: (f64, f64),
    transplanted: bool,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    let spec = verifier.spec(problem);
    if spec.kind != VerifierKind::Ancrr {
        return Err(ReductionError::PreconditionViolated("high-probability rounding needs an ANCRR verifier".into()));
    }
    let alpha = spec.alpha;
    let k = un.num_generators();
    let mut trace = Trace::new();
    if transplanted {
        trace.insert("factor_derivation".into(), json!("transplanted"));
    }
    if k == 0 {
        let x = nominal_branch(problem, un, verifier, &[], config)?.ok_or(RelaxationError::Infeasible)?;
        trace.insert("branch".into(), json!("nominal"));
        return solution(u, x, GuaranteeKind::WithHighProbability, alpha * (1.0 + config.epsilon), trace);
    }
    let w: WidthParams = width_params(un)?;
    let (c_min, c_max) = (w.c_min.expect("k ≥ 1"), w.c_max.expect("k ≥ 1"));
    let (tau, rho, factor) = whp_parameters(alpha, widths.0, widths.1, c_min, c_max, k, config.epsilon);
    trace.insert("tau".into(), json!(tau));
    trace.insert("rho".into(), json!(rho));
    trace.insert("repeats".into(), json!(config.whp_repeats));

    let excluded = generator_support(un);
    let branch_a = match nominal_branch(problem, un, verifier, &excluded, config)? {
        Some(x) => {
            let v = robust_objective(u, &x)?;
            Some((x, v))
        }
        None => None,
    };
    let relaxation = relax(problem, un, config)?;
    trace.insert("z_r".into(), json!(relaxation.z_r));
    let (xb, vb) = repeated_rounding(problem, un, verifier, &relaxation.x_star, config)?;
    let (x, branch) = match branch_a {
        Some((xa, va)) if va <= vb => (xa, "zero_generator"),
        _ => (xb, "rounding"),
    };
    trace.insert("branch".into(), json!(branch));
    solution(u, x, GuaranteeKind::WithHighProbability, factor, trace)
}

/// Randomized rounding for affine polyhedral sets, with a separate branch for
/// solutions that avoid every generator.
pub fn polyhedral_whp<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let (un, _) = normalize(u)?;
    if !matches!(un, UncertaintySet::PolyhedralAffine { .. }) {
        return Err(ReductionError::VariantMismatch { expected: "poly_affine", got: un.variant_name() });
    }
    let w = width_params(&un)?;
    let widths = (w.beta.unwrap_or(1.0), w.gamma.unwrap_or(1.0));
    whp_pipeline(problem, u, &un, verifier, config, widths, false)
}

fn shape_inverse_nonnegative(shape: &[Vec<f64>]) -> Result<(), ReductionError> {
    let inv = to_dmatrix(shape).try_inverse().ok_or(UncertaintyError::NotPositiveDefinite)?;
    if inv.iter().all(|&v| v >= -1e-12) {
        Ok(())
    } else {
        Err(ReductionError::PreconditionViolated("D⁻¹ has a negative entry".into()))
    }
}

/// Decomposition-based rounding for free-sign affine ellipsoids with `DCᵀ ≥ 0`:
/// the atom of smallest robust objective.
pub fn ellipsoid_min_decomp<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let UncertaintySet::EllipsoidAffine { c, shape, sign_constrained: false, .. } = u else {
        return Err(ReductionError::VariantMismatch { expected: "free-sign ellipsoid_affine", got: u.variant_name() });
    };
    let dct = to_dmatrix(shape) * to_dmatrix(c).transpose();
    if dct.iter().any(|&v| v < -1e-12) {
        return Err(ReductionError::PreconditionViolated("D·Cᵀ has a negative entry".into()));
    }
    let n = problem.num_vars();
    let k = u.num_generators();
    let alpha = verifier.spec(problem).alpha;
    let relaxation = relax(problem, u, config)?;
    let decomposition = decompose_point(problem, verifier, alpha, &relaxation.x_star, config)?;
    let values = decomposition
        .atoms
        .iter()
        .map(|a| robust_objective(u, a))
        .collect::<Result<Vec<f64>, _>>()?;
    let pick = (0..values.len()).fold(0, |b, i| if values[i] < values[b] { i } else { b });
    let mut trace = Trace::new();
    trace.insert("z_r".into(), json!(relaxation.z_r));
    trace.insert("k_exceeds_n".into(), json!(k > n));
    trace.insert("decomposition".into(), serde_json::to_value(&decomposition).expect("serializable"));
    trace.insert("x_star".into(), json!(relaxation.x_star));
    let x_hat = decomposition.atoms[pick].clone();
    solution(u, x_hat, GuaranteeKind::Deterministic, alpha * (k as f64).sqrt(), trace)
}

/// Threshold rounding for direct ellipsoids with `D⁻¹ ≥ 0` entrywise.
pub fn ellipsoid_covering<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let UncertaintySet::EllipsoidDirect { shape, .. } = u else {
        return Err(ReductionError::VariantMismatch { expected: "ellipsoid_direct", got: u.variant_name() });
    };
    shape_inverse_nonnegative(shape)?;
    let n = problem.num_vars();
    let alpha = verifier.spec(problem).alpha;
    let w = width_params(u)?;
    let (lmin, lmax) = (w.lambda_min.expect("ellipsoid"), w.lambda_max.expect("ellipsoid"));
    let tau = (lmin / (alpha * lmax * n as f64)).sqrt();
    let factor = alpha + 2.0 * (alpha * lmax * n as f64 / lmin).sqrt();
    let relaxation = relax(problem, u, config)?;
    let decomposition = decompose_point(problem, verifier, alpha, &relaxation.x_star, config)?;
    let mut trace = Trace::new();
    trace.insert("z_r".into(), json!(relaxation.z_r));
    trace.insert("lambda_min".into(), json!(lmin));
    trace.insert("lambda_max".into(), json!(lmax));
    let x_hat = threshold_select(problem, u.c0(), &relaxation.x_star, &decomposition, tau, lmax, &mut trace);
    solution(u, x_hat, GuaranteeKind::Deterministic, factor, trace)
}

/// Randomized rounding for sign-constrained affine ellipsoids with `D⁻¹ ≥ 0` entrywise.
/// The factor reuses the polyhedral expression with `(β, γ) → (λ_min, λ_max)`.
pub fn ellipsoid_whp<P, V>(
    problem: &P,
    u: &UncertaintySet,
    verifier: &V,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError>
where
    P: NominalProblem + ?Sized,
    V: Verifier<P> + ?Sized,
{
    config.validate()?;
    check_dims(problem, u)?;
    let UncertaintySet::EllipsoidAffine { shape, sign_constrained: true, .. } = u else {
        return Err(ReductionError::VariantMismatch {
            expected: "sign-constrained ellipsoid_affine",
            got: u.variant_name(),
        });
    };
    shape_inverse_nonnegative(shape)?;
    let w = width_params(u)?;
    let widths = (w.lambda_min.expect("ellipsoid"), w.lambda_max.expect("ellipsoid"));
    whp_pipeline(problem, u, u, verifier, config, widths, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Expectation,
    Budget,
    DualFit,
    PolyWhp,
    EllDecomp,
    EllCover,
    EllWhp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Expectation,
        Algorithm::Budget,
        Algorithm::DualFit,
        Algorithm::PolyWhp,
        Algorithm::EllDecomp,
        Algorithm::EllCover,
        Algorithm::EllWhp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Expectation => "expectation",
            Algorithm::Budget => "budget",
            Algorithm::DualFit => "dualfit",
            Algorithm::PolyWhp => "poly-whp",
            Algorithm::EllDecomp => "ell-decomp",
            Algorithm::EllCover => "ell-cover",
            Algorithm::EllWhp => "ell-whp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn run<P, V>(
        self,
        problem: &P,
        u: &UncertaintySet,
        verifier: &V,
        config: &ReductionConfig,
    ) -> Result<RobustSolution, ReductionError>
    where
        P: NominalProblem + ?Sized,
        V: Verifier<P> + ?Sized,
    {
        match self {
            Algorithm::Expectation => robust_in_expectation(problem, u, verifier, config),
            Algorithm::Budget => budget_enumerate(problem, u, verifier, config),
            Algorithm::DualFit => covering_dual_fit(problem, u, verifier, config),
            Algorithm::PolyWhp => polyhedral_whp(problem, u, verifier, config),
            Algorithm::EllDecomp => ellipsoid_min_decomp(problem, u, verifier, config),
            Algorithm::EllCover => ellipsoid_covering(problem, u, verifier, config),
            Algorithm::EllWhp => ellipsoid_whp(problem, u, verifier, config),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::SetCoverInstance;
    use crate::verifiers::{AncrrVerifier, GreedyVerifier};
    use approx::assert_abs_diff_eq;

    fn tiny1() -> SetCoverInstance {
        SetCoverInstance::new(2, vec![vec![0], vec![1], vec![0, 1]], vec![1.0, 1.0, 1.5]).unwrap()
    }

    fn tiny2() -> SetCoverInstance {
        SetCoverInstance::new(2, vec![vec![0], vec![1]], vec![1.0, 1.0]).unwrap()
    }

    fn tiny2_u() -> UncertaintySet {
        UncertaintySet::budget(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).unwrap()
    }

    fn identity(k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    }

    #[test]
    fn expectation_on_tiny2() {
        let s = robust_in_expectation(&tiny2(), &tiny2_u(), &GreedyVerifier, &Default::default()).unwrap();
        assert_eq!(s.x_hat.support(), vec![0, 1]);
        assert_abs_diff_eq!(s.robust_objective, 3.0, epsilon = 1e-9);
        assert_eq!(s.claimed_factor, 1.5);
        assert!(s.decomposition().is_some());
    }

    #[test]
    fn expectation_mixture_on_tiny1() {
        let t = tiny1();
        let u = UncertaintySet::budget(t.cost().to_vec(), vec![1.0; 3], 1.0).unwrap();
        let s = robust_in_expectation(&t, &u, &GreedyVerifier, &Default::default()).unwrap();
        let d = s.decomposition().unwrap();
        assert!(d.slack <= 1e-7);
        for probe in [vec![1.0, 1.0, 1.5], vec![2.0, 1.0, 1.5], vec![1.0, 2.0, 1.5], vec![1.0, 1.0, 2.5]] {
            assert!(d.expected_cost(&probe) <= 1.5 * 2.25 + 1e-6);
        }
    }

    #[test]
    fn budget_on_tiny2() {
        let cfg = ReductionConfig { epsilon: 0.25, ..Default::default() };
        let s = budget_enumerate(&tiny2(), &tiny2_u(), &GreedyVerifier, &cfg).unwrap();
        assert_eq!(s.x_hat.support(), vec![0, 1]);
        assert_abs_diff_eq!(s.robust_objective, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.claimed_factor, 1.5 * 2.25, epsilon = 1e-12);
        let score = s.trace["score"].as_f64().unwrap();
        assert!(score >= s.robust_objective - 1e-9);
        let guesses = s.trace["guesses"].as_f64().unwrap();
        assert!(guesses <= s.trace["guess_bound"].as_f64().unwrap());
    }

    #[test]
    fn l_value_example() {
        let l = budget_l_value(&[vec![1.0, 1.0]], &[1.0, 2.0], &[1.0, 1.0], 0.5);
        assert_abs_diff_eq!(l, 12.0, epsilon = 1e-12);
    }

    #[test]
    fn budget_rejects_many_rows_and_tiny_caps() {
        let u = UncertaintySet::PolyhedralDirect {
            c0: vec![1.0, 1.0],
            d: vec![1.0, 1.0],
            a: vec![vec![1.0, 0.5]; 4],
            b: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert!(matches!(
            budget_enumerate(&tiny2(), &u, &GreedyVerifier, &Default::default()),
            Err(ReductionError::PreconditionViolated(_))
        ));
        let cfg = ReductionConfig { max_guesses: 3, ..Default::default() };
        assert!(matches!(
            budget_enumerate(&tiny2(), &tiny2_u(), &GreedyVerifier, &cfg),
            Err(ReductionError::GridCapExceeded { .. })
        ));
    }

    #[test]
    fn budget_zero_width() {
        let t = tiny1();
        let u = UncertaintySet::budget(t.cost().to_vec(), vec![0.0; 3], 1.0).unwrap();
        let s = budget_enumerate(&t, &u, &GreedyVerifier, &Default::default()).unwrap();
        assert_eq!(s.x_hat.support(), vec![2]);
        assert_abs_diff_eq!(s.robust_objective, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn dual_fit_on_tiny2() {
        let s = covering_dual_fit(&tiny2(), &tiny2_u(), &GreedyVerifier, &Default::default()).unwrap();
        assert_eq!(s.x_hat.support(), vec![0, 1]);
        assert_abs_diff_eq!(s.robust_objective, 3.0, epsilon = 1e-9);
        assert_eq!(s.trace["forced"], json!([0, 1]));
    }

    #[test]
    fn dual_fit_factor_formula() {
        let (alpha, beta, gamma, n) = (2.0f64, 1.0f64, 1.0f64, 4.0f64);
        let tau = (beta / (alpha * gamma * n)).sqrt();
        assert_abs_diff_eq!(tau, (1.0f64 / 8.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(alpha + 2.0 * (alpha * gamma * n / beta).sqrt(), 2.0 + 2.0 * 8f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rho_formula() {
        let (tau, rho, _) = whp_parameters(1.0, 1.0, 1.0, 1.0, 1.0, 2, 0.1);
        assert_abs_diff_eq!(rho, 6.0 * 4f64.ln() / tau, epsilon = 1e-12);
        // At τ = 0.5, ρ = 12 ln 4.
        assert_abs_diff_eq!(6.0 * 4f64.ln() / 0.5, 12.0 * 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn poly_whp_on_tiny2() {
        let t = tiny2();
        let u = UncertaintySet::PolyhedralAffine {
            c0: vec![1.0, 1.0],
            c: vec![vec![1.0], vec![0.0]],
            a: vec![vec![1.0]],
            b: vec![1.0],
        };
        let s = polyhedral_whp(&t, &u, &AncrrVerifier, &Default::default()).unwrap();
        assert_eq!(s.x_hat.support(), vec![0, 1]);
        assert_abs_diff_eq!(s.robust_objective, 3.0, epsilon = 1e-9);
        assert!(s.claimed_factor >= 1.0);
    }

    #[test]
    fn poly_whp_zero_generator_branch() {
        // The perturbed set is avoidable at no loss.
        let t = SetCoverInstance::new(1, vec![vec![0], vec![0]], vec![1.0, 1.0]).unwrap();
        let u = UncertaintySet::PolyhedralAffine {
            c0: vec![1.0, 1.0],
            c: vec![vec![5.0], vec![0.0]],
            a: vec![vec![1.0]],
            b: vec![1.0],
        };
        let s = polyhedral_whp(&t, &u, &AncrrVerifier, &Default::default()).unwrap();
        assert_eq!(s.trace["branch"], json!("zero_generator"));
        assert_eq!(s.x_hat.support(), vec![1]);
        let wc = worst_case(&u, &s.x_hat.to_f64()).unwrap();
        assert_eq!(wc.value, 0.0);
    }

    #[test]
    fn whp_needs_ancrr() {
        let u = UncertaintySet::PolyhedralAffine {
            c0: vec![1.0, 1.0],
            c: vec![vec![1.0], vec![0.0]],
            a: vec![vec![1.0]],
            b: vec![1.0],
        };
        assert!(matches!(
            polyhedral_whp(&tiny2(), &u, &GreedyVerifier, &Default::default()),
            Err(ReductionError::PreconditionViolated(_))
        ));
    }

    #[test]
    fn ellipsoid_decomp_on_tiny2() {
        let u = UncertaintySet::ellipsoid_affine(vec![1.0, 1.0], identity(2), identity(2), false).unwrap();
        let s = ellipsoid_min_decomp(&tiny2(), &u, &GreedyVerifier, &Default::default()).unwrap();
        assert_abs_diff_eq!(s.robust_objective, 2.0 + 2f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(s.claimed_factor, 1.5 * 2f64.sqrt(), epsilon = 1e-12);
        let neg = UncertaintySet::ellipsoid_affine(
            vec![1.0, 1.0],
            identity(2),
            vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
            false,
        )
        .unwrap();
        assert!(matches!(
            ellipsoid_min_decomp(&tiny2(), &neg, &GreedyVerifier, &Default::default()),
            Err(ReductionError::PreconditionViolated(_))
        ));
        assert!(matches!(
            ellipsoid_min_decomp(&tiny2(), &tiny2_u(), &GreedyVerifier, &Default::default()),
            Err(ReductionError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn ellipsoid_cover_on_tiny2() {
        // D⁻¹ = [[2, 1], [1, 2]].
        let shape = vec![vec![2.0 / 3.0, -1.0 / 3.0], vec![-1.0 / 3.0, 2.0 / 3.0]];
        let u = UncertaintySet::ellipsoid_direct(vec![1.0, 1.0], shape).unwrap();
        let s = ellipsoid_covering(&tiny2(), &u, &GreedyVerifier, &Default::default()).unwrap();
        assert_eq!(s.x_hat.support(), vec![0, 1]);
        assert_abs_diff_eq!(s.robust_objective, 2.0 + 2f64.sqrt() / 3.0, epsilon = 1e-7);
        let id = UncertaintySet::ellipsoid_direct(vec![1.0, 1.0], identity(2)).unwrap();
        let s = ellipsoid_covering(&tiny2(), &id, &GreedyVerifier, &Default::default()).unwrap();
        assert_abs_diff_eq!(s.robust_objective, 2.0 + 2f64.sqrt(), epsilon = 1e-7);
        // D⁻¹ = [[2, -1], [-1, 2]].
        let neg = UncertaintySet::ellipsoid_direct(vec![1.0, 1.0], vec![vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]])
            .unwrap();
        assert!(matches!(
            ellipsoid_covering(&tiny2(), &neg, &GreedyVerifier, &Default::default()),
            Err(ReductionError::PreconditionViolated(_))
        ));
        // τ at α = 1, λ_min = λ_max, n = 4.
        assert_abs_diff_eq!((1.0f64 / (1.0 * 1.0 * 4.0)).sqrt(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ellipsoid_whp_interval() {
        let u = UncertaintySet::ellipsoid_affine(vec![1.0, 1.0], vec![vec![1.0], vec![0.0]], vec![vec![1.0]], true)
            .unwrap();
        let s = ellipsoid_whp(&tiny2(), &u, &AncrrVerifier, &Default::default()).unwrap();
        assert_abs_diff_eq!(s.robust_objective, 3.0, epsilon = 1e-9);
        assert_eq!(s.trace["factor_derivation"], json!("transplanted"));
    }

    #[test]
    fn config_is_validated() {
        let cfg = ReductionConfig { epsilon: 1.5, ..Default::default() };
        assert!(matches!(
            budget_enumerate(&tiny2(), &tiny2_u(), &GreedyVerifier, &cfg),
            Err(ReductionError::InvalidConfig(_))
        ));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::from_name(a.name()), Some(a));
        }
        assert_eq!(Algorithm::from_name("simplex"), None);
    }

    #[test]
    fn solution_json_shape() {
        let s = budget_enumerate(&tiny2(), &tiny2_u(), &GreedyVerifier, &Default::default()).unwrap();
        let v: Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["x"], json!([1, 1]));
        assert_eq!(v["kind"], json!("Deterministic"));
        let back: RobustSolution = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
