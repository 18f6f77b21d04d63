//! Batch front-end for `robustkit`: single solves, exact oracle runs and
//! seeded experiment suites written as CSV.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use robustkit::generators::{
    random_budget, random_ellipsoid_affine, random_ellipsoid_direct, random_poly_affine, random_poly_direct,
};
use robustkit::oracle::MAX_ORACLE_DIM;
use robustkit::relaxation::default_method;
use robustkit::rng::{child_seed, stream};
use robustkit::{
    exact_robust_opt, normalize, parse_instance, parse_uncertainty, random_instance, solve_robust_relaxation, verdict,
    width_params, Algorithm, AncrrVerifier, DecompositionError, GreedyVerifier, InstanceError, OracleError,
    OracleResult, ReductionConfig, ReductionError, RelaxationError, RobustSolution, SetCoverInstance,
    SolverTolerances, UncertaintyError, UncertaintySet, Verifier,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// A failure with a stable machine-readable code and an exit status.
#[derive(Debug, Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), exit_code: 2 }
    }

    fn internal(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), exit_code: 1 }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.code, "message": self.message }).to_string()
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> Self {
        let message = e.to_string();
        match e {
            ReductionError::VariantMismatch { .. }
            | ReductionError::Relaxation(RelaxationError::VariantMismatch) => Self::usage("variant-mismatch", message),
            ReductionError::PreconditionViolated(_) => Self::usage("precondition-violated", message),
            ReductionError::GridCapExceeded { .. } => Self::usage("grid-cap-exceeded", message),
            ReductionError::InvalidConfig(_) => Self::usage("invalid-config", message),
            ReductionError::Uncertainty(u) => u.into(),
            ReductionError::Relaxation(RelaxationError::Uncertainty(u)) => u.into(),
            ReductionError::Relaxation(RelaxationError::Infeasible) => Self::usage("infeasible", message),
            ReductionError::Relaxation(_) => Self::internal("relaxation-failed", message),
            ReductionError::Decomposition(DecompositionError::StalledDecomposition { .. }) => {
                Self::internal("stalled-decomposition", message)
            }
            _ => Self::internal("internal", message),
        }
    }
}

impl From<UncertaintyError> for CliError {
    fn from(e: UncertaintyError) -> Self {
        let message = e.to_string();
        match e {
            UncertaintyError::VariantMismatch { .. } => Self::usage("variant-mismatch", message),
            UncertaintyError::Lp(_) => Self::internal("internal", message),
            _ => Self::usage("invalid-uncertainty", message),
        }
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        Self::usage("invalid-instance", e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        let message = e.to_string();
        match e {
            OracleError::Uncertainty(u) => u.into(),
            OracleError::NoFeasibleSolution => Self::internal("internal", message),
            _ => Self::usage("oracle-unavailable", message),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::usage("io", format!("{}: {e}", path.display())))
}

pub fn load_problem(instance: &Path, uncertainty: &Path) -> Result<(SetCoverInstance, UncertaintySet), CliError> {
    let inst = parse_instance(&read(instance)?)?;
    let u = parse_uncertainty(&read(uncertainty)?, inst.cost())?;
    if u.dim() != inst.num_sets() {
        return Err(CliError::usage(
            "dimension-mismatch",
            format!("instance has {} sets, uncertainty set has dimension {}", inst.num_sets(), u.dim()),
        ));
    }
    Ok((inst, u))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierChoice {
    Greedy,
    Ancrr,
}

impl VerifierChoice {
    pub fn from_name(name: &str) -> Result<Self, CliError> {
        match name {
            "greedy" => Ok(Self::Greedy),
            "ancrr" => Ok(Self::Ancrr),
            other => Err(CliError::usage("unknown-verifier", format!("unknown verifier '{other}'"))),
        }
    }

    /// ANCRR for the high-probability algorithms, greedy otherwise.
    pub fn default_for(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::PolyWhp | Algorithm::EllWhp => Self::Ancrr,
            _ => Self::Greedy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Ancrr => "ancrr",
        }
    }
}

pub fn parse_algorithm(name: &str) -> Result<Algorithm, CliError> {
    Algorithm::from_name(name).ok_or_else(|| CliError::usage("unknown-algorithm", format!("unknown algorithm '{name}'")))
}

pub fn run_algorithm(
    algorithm: Algorithm,
    verifier: VerifierChoice,
    inst: &SetCoverInstance,
    u: &UncertaintySet,
    config: &ReductionConfig,
) -> Result<RobustSolution, ReductionError> {
    let v: &dyn Verifier<SetCoverInstance> = match verifier {
        VerifierChoice::Greedy => &GreedyVerifier,
        VerifierChoice::Ancrr => &AncrrVerifier,
    };
    algorithm.run(inst, u, v, config)
}

/// Tolerance overrides shared by every subcommand that solves LPs.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ToleranceArgs {
    #[arg(long)]
    pub feas_tol: Option<f64>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[arg(long)]
    pub pivot_tol: Option<f64>,
    #[arg(long)]
    pub optimality_tol: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Relative violation threshold of constraint generation.
    #[arg(long)]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
}

impl ToleranceArgs {
    pub fn apply(&self, config: &mut ReductionConfig) {
        let mut lp = SolverTolerances::default();
        if let Some(v) = self.feas_tol {
            lp.feas_tol = v;
        }
        if let Some(v) = self.gap_tol {
            lp.gap_tol = v;
        }
        if let Some(v) = self.pivot_tol {
            lp.pivot_tol = v;
        }
        if let Some(v) = self.optimality_tol {
            lp.optimality_tol = v;
        }
        if let Some(v) = self.max_iterations {
            lp.max_iterations = v;
        }
        config.relaxation.lp = lp;
        config.relaxation.worst_case.lp = lp;
        config.decomposition.lp = lp;
        if let Some(v) = self.cg_tol {
            config.relaxation.cg_tol = v;
        }
        if let Some(v) = self.max_rounds {
            config.relaxation.max_rounds = v;
        }
    }
}

#[derive(Clone, Debug, clap::Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub uncertainty: PathBuf,
    /// One of expectation, budget, dualfit, poly-whp, ell-decomp, ell-cover, ell-whp.
    #[arg(long)]
    pub algorithm: String,
    /// greedy or ancrr; defaults to ancrr for the high-probability algorithms.
    #[arg(long)]
    pub verifier: Option<String>,
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub repeats: usize,
    #[command(flatten)]
    pub tolerances: ToleranceArgs,
}

pub fn run_solve(args: &SolveArgs) -> Result<RobustSolution, CliError> {
    let algorithm = parse_algorithm(&args.algorithm)?;
    let verifier = match &args.verifier {
        Some(name) => VerifierChoice::from_name(name)?,
        None => VerifierChoice::default_for(algorithm),
    };
    let (inst, u) = load_problem(&args.instance, &args.uncertainty)?;
    let mut config =
        ReductionConfig { epsilon: args.epsilon, whp_repeats: args.repeats, rng_seed: args.seed, ..Default::default() };
    args.tolerances.apply(&mut config);
    Ok(run_algorithm(algorithm, verifier, &inst, &u, &config)?)
}

#[derive(Clone, Debug, clap::Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub uncertainty: PathBuf,
}

pub fn run_oracle(args: &OracleArgs) -> Result<OracleResult, CliError> {
    let (inst, u) = load_problem(&args.instance, &args.uncertainty)?;
    Ok(exact_robust_opt(&inst, &u)?)
}

#[derive(Clone, Debug, clap::Args)]
pub struct VerdictArgs {
    /// A solution document as printed by `solve`.
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub uncertainty: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub opt_r: f64,
    pub ratio: f64,
    pub claimed_factor: f64,
    pub pass: bool,
    /// Whether the recomputed robust objective matches the stored one.
    pub objective_consistent: bool,
}

/// Re-evaluates a stored solution against the exact optimum.
pub fn run_verdict(args: &VerdictArgs) -> Result<VerdictReport, CliError> {
    let (inst, u) = load_problem(&args.instance, &args.uncertainty)?;
    let solution: RobustSolution = serde_json::from_str(&read(&args.solution)?)
        .map_err(|e| CliError::usage("invalid-solution", e.to_string()))?;
    if solution.x_hat.len() != inst.num_sets() || !inst.is_feasible(&solution.x_hat.0)? {
        return Err(CliError::usage("invalid-solution", "solution is not a cover of the instance"));
    }
    let recomputed = robustkit::reductions::robust_objective(&u, &solution.x_hat)?;
    let oracle = exact_robust_opt(&inst, &u)?;
    let v = verdict(&solution, &oracle)?;
    Ok(VerdictReport {
        opt_r: oracle.opt_r,
        ratio: v.ratio,
        claimed_factor: solution.claimed_factor,
        pass: v.pass,
        objective_consistent: (recomputed - solution.robust_objective).abs() <= 1e-9 * (1.0 + recomputed.abs()),
    })
}

/// Uncertainty families the suite generator knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Budget,
    PolyDirect,
    PolyAffine,
    EllipsoidDirect,
    /// Free-sign affine ellipsoid with `D·Cᵀ ≥ 0`.
    EllipsoidAffine,
    /// Sign-constrained affine ellipsoid with `D⁻¹ ≥ 0`.
    EllipsoidAffineSigned,
}

fn default_density() -> f64 {
    0.35
}
fn default_cost_range() -> (f64, f64) {
    (0.5, 4.0)
}
fn default_width() -> f64 {
    1.0
}
fn default_active() -> f64 {
    0.8
}
fn default_budget() -> f64 {
    2.0
}
fn default_generators() -> usize {
    3
}
fn default_rows() -> usize {
    1
}
fn default_spread() -> f64 {
    3.0
}
fn default_count() -> usize {
    1
}

/// One group of generated instances and the algorithms to run on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteGroup {
    pub id: String,
    pub family: Family,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_cost_range")]
    pub cost_range: (f64, f64),
    /// Scale of the perturbations.
    #[serde(default = "default_width")]
    pub width: f64,
    /// Probability that a budget coordinate has a positive deviation.
    #[serde(default = "default_active")]
    pub active: f64,
    /// Budget of the budget family.
    #[serde(default = "default_budget")]
    pub budget: f64,
    /// Number of generators of the affine families.
    #[serde(default = "default_generators")]
    pub generators: usize,
    /// Rows of `A` for the polyhedral families.
    #[serde(default = "default_rows")]
    pub rows: usize,
    /// Eigenvalue spread of the ellipsoid shapes.
    #[serde(default = "default_spread")]
    pub spread: f64,
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub verifier: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub groups: Vec<SuiteGroup>,
}

fn default_epsilon() -> f64 {
    0.25
}
fn default_repeats() -> usize {
    16
}

pub fn parse_suite(document: &str) -> Result<Suite, CliError> {
    let suite: Suite = serde_json::from_str(document).map_err(|e| CliError::usage("invalid-suite", e.to_string()))?;
    for g in &suite.groups {
        for a in &g.algorithms {
            parse_algorithm(a)?;
        }
        if let Some(v) = &g.verifier {
            VerifierChoice::from_name(v)?;
        }
        if g.n == 0 || g.m == 0 || g.count == 0 || !(g.density > 0.0 && g.density <= 1.0) {
            return Err(CliError::usage("invalid-suite", format!("group '{}' has invalid sizes", g.id)));
        }
    }
    Ok(suite)
}

/// Instances of a group, drawn from its own stream of the master seed.
pub fn generate_group(suite: &Suite, group_index: usize) -> Vec<(String, SetCoverInstance, UncertaintySet)> {
    let g = &suite.groups[group_index];
    let mut rng = stream(suite.master_seed, group_index as u64);
    (0..g.count)
        .map(|i| {
            let inst = random_instance(child_seed(&mut rng), g.n, g.m, g.density, g.cost_range);
            let c0 = inst.cost();
            let u = match g.family {
                Family::Budget => random_budget(&mut rng, c0, g.width, g.active, g.budget),
                Family::PolyDirect => random_poly_direct(&mut rng, c0, g.rows, g.width),
                Family::PolyAffine => random_poly_affine(&mut rng, c0, g.generators, g.rows, g.width),
                Family::EllipsoidDirect => random_ellipsoid_direct(&mut rng, c0, g.width, g.spread),
                Family::EllipsoidAffine => {
                    random_ellipsoid_affine(&mut rng, c0, g.generators, g.width, g.spread, false)
                }
                Family::EllipsoidAffineSigned => {
                    random_ellipsoid_affine(&mut rng, c0, g.generators, g.width, g.spread, true)
                }
            };
            (format!("{}-{i:03}", g.id), inst, u)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub instance_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub gamma_over_beta: Option<f64>,
    pub lambda_ratio: Option<f64>,
    pub cmax_over_cmin: Option<f64>,
    pub z_r: Option<f64>,
    pub opt_r: Option<f64>,
    pub robust_objective: Option<f64>,
    pub claimed_factor: Option<f64>,
    pub observed_ratio: Option<f64>,
    pub runtime_ms: Option<f64>,
    pub status: String,
}

struct Job<'a> {
    id: &'a str,
    inst: &'a SetCoverInstance,
    u: &'a UncertaintySet,
    oracle: &'a Option<Result<OracleResult, String>>,
    algorithm: Algorithm,
    verifier: VerifierChoice,
    seed: u64,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? / b?)
}

fn run_job(job: &Job<'_>, suite: &Suite, timing: bool) -> ExperimentRow {
    let mut row = ExperimentRow {
        instance_id: job.id.to_string(),
        algorithm: job.algorithm.name().to_string(),
        seed: job.seed,
        n: job.inst.num_sets(),
        m: job.inst.universe_size(),
        k: job.u.num_generators(),
        gamma_over_beta: None,
        lambda_ratio: None,
        cmax_over_cmin: None,
        z_r: None,
        opt_r: None,
        robust_objective: None,
        claimed_factor: None,
        observed_ratio: None,
        runtime_ms: None,
        status: String::new(),
    };
    if let Ok((un, _)) = normalize(job.u) {
        if let Ok(w) = width_params(&un) {
            row.gamma_over_beta = ratio(w.gamma, w.beta);
            row.lambda_ratio = ratio(w.lambda_max, w.lambda_min);
            row.cmax_over_cmin = ratio(w.c_max, w.c_min);
        }
    }
    let config =
        ReductionConfig { epsilon: suite.epsilon, whp_repeats: suite.repeats, rng_seed: job.seed, ..Default::default() };
    let start = Instant::now();
    let result = run_algorithm(job.algorithm, job.verifier, job.inst, job.u, &config);
    if timing {
        row.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    let solution = match result {
        Ok(s) => s,
        Err(e) => {
            row.status = format!("error:{}", CliError::from(e).code);
            return row;
        }
    };
    row.z_r = solution.z_r().or_else(|| {
        let (un, _) = normalize(job.u).ok()?;
        solve_robust_relaxation(job.inst, &un, default_method(&un), &config.relaxation).ok().map(|r| r.z_r)
    });
    row.robust_objective = Some(solution.robust_objective);
    row.claimed_factor = Some(solution.claimed_factor);
    row.status = match job.oracle {
        None => "oracle-skipped".to_string(),
        Some(Err(code)) => format!("error:{code}"),
        Some(Ok(oracle)) => {
            row.opt_r = Some(oracle.opt_r);
            match verdict(&solution, oracle) {
                Ok(v) => {
                    row.observed_ratio = Some(v.ratio);
                    if v.pass { "pass" } else { "fail" }.to_string()
                }
                Err(e) => format!("error:{}", CliError::from(e).code),
            }
        }
    };
    row
}

/// Runs every (instance, algorithm, seed) of the suite. Rows are sorted by
/// instance id, algorithm name and seed; timing is recorded only on request
/// so that reports are reproducible byte for byte.
pub fn run_experiment(suite: &Suite, timing: bool) -> Vec<ExperimentRow> {
    let instances: Vec<(usize, String, SetCoverInstance, UncertaintySet)> = (0..suite.groups.len())
        .flat_map(|g| generate_group(suite, g).into_iter().map(move |(id, i, u)| (g, id, i, u)))
        .collect();
    let oracles: Vec<Option<Result<OracleResult, String>>> = instances
        .par_iter()
        .map(|(_, _, inst, u)| {
            (inst.num_sets() <= MAX_ORACLE_DIM)
                .then(|| exact_robust_opt(inst, u).map_err(|e| CliError::from(e).code.to_string()))
        })
        .collect();
    let mut jobs = Vec::new();
    for ((g, id, inst, u), oracle) in instances.iter().zip(&oracles) {
        let group = &suite.groups[*g];
        for name in &group.algorithms {
            let algorithm = parse_algorithm(name).expect("suite was validated");
            let verifier = group
                .verifier
                .as_deref()
                .map(|v| VerifierChoice::from_name(v).expect("suite was validated"))
                .unwrap_or_else(|| VerifierChoice::default_for(algorithm));
            for &seed in &suite.seeds {
                jobs.push(Job { id, inst, u, oracle, algorithm, verifier, seed });
            }
        }
    }
    let mut rows: Vec<ExperimentRow> = jobs.par_iter().map(|job| run_job(job, suite, timing)).collect();
    rows.sort_by(|a, b| (&a.instance_id, &a.algorithm, a.seed).cmp(&(&b.instance_id, &b.algorithm, b.seed)));
    rows
}

pub fn rows_to_csv(rows: &[ExperimentRow]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record([
            "instance_id",
            "algorithm",
            "seed",
            "n",
            "m",
            "k",
            "gamma_over_beta",
            "lambda_ratio",
            "cmax_over_cmin",
            "z_r",
            "opt_r",
            "robust_objective",
            "claimed_factor",
            "observed_ratio",
            "runtime_ms",
            "status",
        ])
        .map_err(|e| CliError::internal("csv", e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::internal("csv", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::internal("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, clap::Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Record wall-clock runtimes in the runtime_ms column.
    #[arg(long)]
    pub timing: bool,
}

/// Worker pool honoring `ROBUSTKIT_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ROBUSTKIT_THREADS") {
        let threads: usize =
            v.parse().map_err(|_| CliError::usage("invalid-env", format!("ROBUSTKIT_THREADS='{v}' is not a count")))?;
        builder = builder.num_threads(threads);
    }
    builder.build().map_err(|e| CliError::internal("internal", e.to_string()))
}

pub fn run_experiment_command(args: &ExperimentArgs) -> Result<usize, CliError> {
    let suite = parse_suite(&read(&args.suite)?)?;
    let pool = thread_pool()?;
    let rows = pool.install(|| run_experiment(&suite, args.timing));
    let csv = rows_to_csv(&rows)?;
    std::fs::write(&args.out, csv).map_err(|e| CliError::usage("io", format!("{}: {e}", args.out.display())))?;
    Ok(rows.len())
}
