//! The robust convex relaxation `z_R = min_{x∈Q} max_{c∈C} c·x`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::NominalProblem;
use crate::lp::{dot, solve_lp, LpError, LpProblem, LpStatus, RowSense, SolverTolerances};
use crate::uncertainty::{dual_reformulation, worst_case_with, UncertaintyError, UncertaintySet, WorstCaseOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error("constraint generation did not converge in {0} rounds")]
    IterationLimit(usize),
    #[error("the relaxation of the nominal problem is infeasible")]
    Infeasible,
    #[error("the dual reformulation only applies to polyhedral sets")]
    VariantMismatch,
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelaxationMethod {
    ConstraintGeneration,
    DualReformulation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxationTolerances {
    pub lp: SolverTolerances,
    pub worst_case: WorstCaseOptions,
    /// Relative violation above which a scenario is added.
    pub cg_tol: f64,
    pub max_rounds: usize,
    /// Scenarios closer than this in max-norm count as duplicates.
    pub dedup_tol: f64,
}

impl Default for RelaxationTolerances {
    fn default() -> Self {
        Self {
            lp: SolverTolerances::default(),
            worst_case: WorstCaseOptions::default(),
            cg_tol: 1e-7,
            max_rounds: 1000,
            dedup_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationResult {
    pub z_r: f64,
    pub x_star: Vec<f64>,
    pub active_scenarios: Vec<Vec<f64>>,
    pub iterations: usize,
    pub method: RelaxationMethod,
}

/// Solves the relaxation by constraint generation or, for polyhedral sets,
/// through the single-LP dual reformulation.
pub fn solve_robust_relaxation<P: NominalProblem + ?Sized>(
    problem: &P,
    u: &UncertaintySet,
    method: RelaxationMethod,
    tol: &RelaxationTolerances,
) -> Result<RelaxationResult, RelaxationError> {
    match method {
        RelaxationMethod::DualReformulation => by_reformulation(problem, u, tol),
        RelaxationMethod::ConstraintGeneration => by_constraint_generation(problem, u, tol),
    }
}

/// The single-LP reformulation for polyhedral sets, constraint generation otherwise.
pub fn default_method(u: &UncertaintySet) -> RelaxationMethod {
    if u.is_polyhedral() {
        RelaxationMethod::DualReformulation
    } else {
        RelaxationMethod::ConstraintGeneration
    }
}

fn by_reformulation<P: NominalProblem + ?Sized>(
    problem: &P,
    u: &UncertaintySet,
    tol: &RelaxationTolerances,
) -> Result<RelaxationResult, RelaxationError> {
    if !u.is_polyhedral() {
        return Err(RelaxationError::VariantMismatch);
    }
    let n = problem.num_vars();
    let base = problem.lp_relaxation(u.c0());
    let r = dual_reformulation(u, &base)?;
    let sol = solve_lp(&r.lp, &tol.lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(RelaxationError::Infeasible);
    }
    let x_star: Vec<f64> = sol.primal[..n].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let wc = worst_case_with(u, &x_star, &tol.worst_case)?;
    Ok(RelaxationResult {
        z_r: sol.objective,
        x_star,
        active_scenarios: vec![wc.witness_c],
        iterations: 1,
        method: RelaxationMethod::DualReformulation,
    })
}

fn near_duplicate(pool: &[Vec<f64>], c: &[f64], tol: f64) -> bool {
    pool.iter().any(|p| p.iter().zip(c).all(|(a, b)| (a - b).abs() <= tol))
}

fn by_constraint_generation<P: NominalProblem + ?Sized>(
    problem: &P,
    u: &UncertaintySet,
    tol: &RelaxationTolerances,
) -> Result<RelaxationResult, RelaxationError> {
    let n = problem.num_vars();
    let c0 = u.c0().to_vec();
    // Master: min z subject to c·x − z ≤ 0 for every collected c, x ∈ Q.
    let mut master: LpProblem = problem.lp_relaxation(&vec![0.0; n]);
    let z = master.add_column(1.0, f64::NEG_INFINITY, f64::INFINITY, &[]);
    let mut scenarios: Vec<Vec<f64>> = Vec::new();
    let add_cut = |master: &mut LpProblem, c: &[f64]| {
        let mut row = c.to_vec();
        row.push(-1.0);
        master.add_row(row, RowSense::Le, 0.0);
    };
    add_cut(&mut master, &c0);
    scenarios.push(c0);

    for round in 1..=tol.max_rounds {
        let sol = solve_lp(&master, &tol.lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(RelaxationError::Infeasible);
        }
        let x: Vec<f64> = sol.primal[..n].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let z_master = sol.primal[z];
        let wc = worst_case_with(u, &x, &tol.worst_case)?;
        let true_value = dot(u.c0(), &x) + wc.value;
        let violation = true_value - z_master;
        let finished = violation <= tol.cg_tol * (1.0 + z_master.abs())
            || near_duplicate(&scenarios, &wc.witness_c, tol.dedup_tol);
        if finished {
            return Ok(RelaxationResult {
                z_r: z_master.max(true_value),
                x_star: x,
                active_scenarios: scenarios,
                iterations: round,
                method: RelaxationMethod::ConstraintGeneration,
            });
        }
        add_cut(&mut master, &wc.witness_c);
        scenarios.push(wc.witness_c);
    }
    Err(RelaxationError::IterationLimit(tol.max_rounds))
}
