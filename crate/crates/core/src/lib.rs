//! Approximation algorithms for cost-robust covering problems under
//! polyhedral and ellipsoidal uncertainty, built from nominal LP rounding
//! procedures, with exact enumeration oracles for small instances.

pub mod decomposition;
pub mod generators;
pub mod instances;
pub mod lp;
pub mod oracle;
pub mod reductions;
pub mod relaxation;
pub mod rng;
pub mod uncertainty;
pub mod verifiers;

pub use decomposition::{decompose, decompose_with, sample, ConvexDecomposition, DecompositionError, DecompositionOptions};
pub use instances::{parse_instance, random_instance, InstanceError, IntegralSolution, NominalProblem, SetCoverInstance};
pub use lp::{solve_lp, LpError, LpProblem, LpSolution, LpStatus, ObjectiveSense, RowSense, SolverTolerances};
pub use oracle::{exact_robust_opt, mixture_expectation, verdict, GuaranteeVerdict, OracleError, OracleResult};
pub use reductions::{Algorithm, GuaranteeKind, ReductionConfig, ReductionError, RobustSolution};
pub use relaxation::{solve_robust_relaxation, RelaxationError, RelaxationMethod, RelaxationResult, RelaxationTolerances};
pub use uncertainty::{
    normalize, parse_uncertainty, width_params, worst_case, UncertaintyError, UncertaintySet, WidthParams, WorstCase,
};
pub use verifiers::{AncrrVerifier, GreedyVerifier, Verifier, VerifierError, VerifierKind, VerifierSpec};
