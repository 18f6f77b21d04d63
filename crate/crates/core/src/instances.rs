//! Set cover, the reference nominal problem.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LpProblem, RowSense};
use crate::rng::seeded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("element {0} is not covered by any set")]
    UncoverableElement(usize),
    #[error("set {0} has a negative cost")]
    NegativeCost(usize),
    #[error("all nominal costs are zero")]
    ZeroCost,
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A binary solution vector.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<u8>", into = "Vec<u8>")]
pub struct IntegralSolution(pub Vec<bool>);

impl IntegralSolution {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn from_support(n: usize, support: &[usize]) -> Self {
        let mut x = vec![false; n];
        for &j in support {
            x[j] = true;
        }
        Self(x)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j]).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// `cost·x`, skipping unselected coordinates so infinite prices on
    /// unused sets do not poison the sum.
    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.0.iter().zip(cost).filter(|(&b, _)| b).map(|(_, &c)| c).sum()
    }
}

impl fmt::Debug for IntegralSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = self.0.iter().map(|&b| if b { '1' } else { '0' }).collect();
        write!(f, "x[{bits}]")
    }
}

impl From<Vec<u8>> for IntegralSolution {
    fn from(v: Vec<u8>) -> Self {
        Self(v.into_iter().map(|b| b != 0).collect())
    }
}

impl From<IntegralSolution> for Vec<u8> {
    fn from(x: IntegralSolution) -> Self {
        x.0.into_iter().map(u8::from).collect()
    }
}

/// What the verifiers, reductions and oracle need from a nominal covering
/// problem with binary variables.
pub trait NominalProblem: Sync {
    fn num_vars(&self) -> usize;

    fn nominal_cost(&self) -> &[f64];

    /// LP relaxation `min cost·x, x ∈ Q` with `Q ⊆ [0,1]ⁿ`.
    fn lp_relaxation(&self, cost: &[f64]) -> LpProblem;

    /// Membership in the feasible family; the zero vector is never a member.
    fn is_member(&self, x: &IntegralSolution) -> bool;

    /// Sets the coordinates in `forced` to 1. Membership is preserved because
    /// the family is closed upwards.
    fn round_up(&self, x: &IntegralSolution, forced: &[usize]) -> IntegralSolution {
        let mut y = x.clone();
        for &j in forced {
            y.0[j] = true;
        }
        y
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDocument {
    m: usize,
    sets: Vec<Vec<usize>>,
    cost: Vec<f64>,
}

/// Universe `{0..m}`, a family of `n` subsets and their nominal costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDocument", into = "InstanceDocument")]
pub struct SetCoverInstance {
    universe_size: usize,
    sets: Vec<Vec<usize>>,
    cost: Vec<f64>,
    covering: Vec<Vec<usize>>,
}

impl TryFrom<InstanceDocument> for SetCoverInstance {
    type Error = InstanceError;

    fn try_from(doc: InstanceDocument) -> Result<Self, Self::Error> {
        Self::new(doc.m, doc.sets, doc.cost)
    }
}

impl From<SetCoverInstance> for InstanceDocument {
    fn from(inst: SetCoverInstance) -> Self {
        Self { m: inst.universe_size, sets: inst.sets, cost: inst.cost }
    }
}

impl SetCoverInstance {
    /// Validates and builds an instance. Element lists are sorted and deduplicated.
    pub fn new(universe_size: usize, mut sets: Vec<Vec<usize>>, cost: Vec<f64>) -> Result<Self, InstanceError> {
        if universe_size == 0 {
            return Err(InstanceError::SchemaError("empty universe".into()));
        }
        if sets.is_empty() {
            return Err(InstanceError::SchemaError("no sets".into()));
        }
        if cost.len() != sets.len() {
            return Err(InstanceError::SchemaError(format!("{} sets but {} costs", sets.len(), cost.len())));
        }
        if let Some(j) = cost.iter().position(|c| !c.is_finite()) {
            return Err(InstanceError::SchemaError(format!("cost of set {j} is not finite")));
        }
        if let Some(j) = cost.iter().position(|&c| c < 0.0) {
            return Err(InstanceError::NegativeCost(j));
        }
        let mut covering = vec![Vec::new(); universe_size];
        for (i, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            for &e in set.iter() {
                if e >= universe_size {
                    return Err(InstanceError::SchemaError(format!(
                        "set {i} contains element {e} but the universe has {universe_size} elements"
                    )));
                }
                covering[e].push(i);
            }
        }
        if let Some(e) = covering.iter().position(Vec::is_empty) {
            return Err(InstanceError::UncoverableElement(e));
        }
        Ok(Self { universe_size, sets, cost, covering })
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    pub fn num_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// Indices of the sets containing element `e`.
    pub fn sets_covering(&self, e: usize) -> &[usize] {
        &self.covering[e]
    }

    pub fn is_feasible(&self, x: &[bool]) -> Result<bool, InstanceError> {
        if x.len() != self.num_sets() {
            return Err(InstanceError::LengthMismatch { expected: self.num_sets(), got: x.len() });
        }
        Ok(self.covering.iter().all(|sets| sets.iter().any(|&i| x[i])))
    }

    /// Largest shortfall `1 − Σ_{i∋e} x_i` over elements, clipped at zero.
    pub fn max_cover_violation(&self, x: &[f64]) -> (usize, f64) {
        self.covering
            .iter()
            .enumerate()
            .map(|(e, sets)| (e, 1.0 - sets.iter().map(|&i| x[i]).sum::<f64>()))
            .fold((0, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
    }

    pub fn lp_relaxation(&self, cost: &[f64]) -> LpProblem {
        let n = self.num_sets();
        let mut lp = LpProblem::minimize(cost.to_vec());
        for sets in &self.covering {
            let mut row = vec![0.0; n];
            for &i in sets {
                row[i] = 1.0;
            }
            lp.add_row(row, RowSense::Ge, 1.0);
        }
        for j in 0..n {
            lp.set_bounds(j, 0.0, 1.0);
        }
        lp
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serialization cannot fail")
    }
}

impl NominalProblem for SetCoverInstance {
    fn num_vars(&self) -> usize {
        self.num_sets()
    }

    fn nominal_cost(&self) -> &[f64] {
        &self.cost
    }

    fn lp_relaxation(&self, cost: &[f64]) -> LpProblem {
        SetCoverInstance::lp_relaxation(self, cost)
    }

    fn is_member(&self, x: &IntegralSolution) -> bool {
        !x.is_zero() && self.is_feasible(&x.0).unwrap_or(false)
    }
}

/// Parses the `{"m", "sets", "cost"}` document. Parsed instances must have
/// some positive cost so that robust optima are strictly positive.
pub fn parse_instance(document: &str) -> Result<SetCoverInstance, InstanceError> {
    let doc: InstanceDocument =
        serde_json::from_str(document).map_err(|e| InstanceError::SchemaError(e.to_string()))?;
    let inst = SetCoverInstance::try_from(doc)?;
    if inst.cost.iter().all(|&c| c == 0.0) {
        return Err(InstanceError::ZeroCost);
    }
    Ok(inst)
}

/// Random instance: each set holds each element with probability `density`,
/// uncovered elements are then given to one uniformly chosen set, and costs
/// are uniform on `cost_range`.
pub fn random_instance(seed: u64, n: usize, m: usize, density: f64, cost_range: (f64, f64)) -> SetCoverInstance {
    assert!(n >= 1 && m >= 1, "random_instance needs n, m ≥ 1");
    assert!(density > 0.0 && density <= 1.0, "density must lie in (0, 1]");
    let mut rng = seeded(seed);
    let mut sets: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..m).filter(|_| rng.gen_bool(density)).collect())
        .collect();
    for e in 0..m {
        if !sets.iter().any(|s| s.contains(&e)) {
            let i = rng.gen_range(0..n);
            sets[i].push(e);
        }
    }
    let (lo, hi) = cost_range;
    let cost = (0..n)
        .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect();
    SetCoverInstance::new(m, sets, cost).expect("generator output is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, solve_lp_bruteforce, SolverTolerances};

    fn tiny1() -> SetCoverInstance {
        SetCoverInstance::new(2, vec![vec![0], vec![1], vec![0, 1]], vec![1.0, 1.0, 1.5]).unwrap()
    }

    #[test]
    fn feasibility_examples() {
        let t = tiny1();
        assert!(t.is_feasible(&[false, false, true]).unwrap());
        assert!(!t.is_feasible(&[true, false, false]).unwrap());
        assert!(t.is_feasible(&[true, true, true]).unwrap());
        assert_eq!(t.is_feasible(&[true]), Err(InstanceError::LengthMismatch { expected: 3, got: 1 }));
        assert!(!t.is_member(&IntegralSolution::zeros(3)));
    }

    #[test]
    fn relaxation_examples() {
        let t = tiny1();
        let tol = SolverTolerances::default();
        let s = solve_lp(&t.lp_relaxation(t.cost()), &tol).unwrap();
        let b = solve_lp_bruteforce(&t.lp_relaxation(t.cost())).unwrap();
        assert!((s.objective - 1.5).abs() < 1e-12);
        assert!((b.objective - 1.5).abs() < 1e-8);
        let z = solve_lp(&t.lp_relaxation(&[0.0; 3]), &tol).unwrap();
        assert_eq!(z.objective, 0.0);

        let t2 = SetCoverInstance::new(2, vec![vec![0], vec![1]], vec![1.0, 1.0]).unwrap();
        let s = solve_lp(&t2.lp_relaxation(t2.cost()), &tol).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert_eq!(s.primal, vec![1.0, 1.0]);
    }

    #[test]
    fn parse_examples() {
        let t = parse_instance(r#"{"m": 2, "sets": [[0], [1], [0, 1]], "cost": [1, 1, 1.5]}"#).unwrap();
        assert_eq!((t.num_sets(), t.universe_size()), (3, 2));
        assert!(matches!(
            parse_instance(r#"{"m": 2, "sets": [[0, 5], [1]], "cost": [1, 1]}"#),
            Err(InstanceError::SchemaError(_))
        ));
        assert_eq!(
            parse_instance(r#"{"m": 2, "sets": [[0], [0]], "cost": [1, 1]}"#),
            Err(InstanceError::UncoverableElement(1))
        );
        assert_eq!(
            parse_instance(r#"{"m": 1, "sets": [[0]], "cost": [-1]}"#),
            Err(InstanceError::NegativeCost(0))
        );
        assert_eq!(parse_instance(r#"{"m": 1, "sets": [[0]], "cost": [0]}"#), Err(InstanceError::ZeroCost));
        assert!(matches!(parse_instance(r#"{"m": 1}"#), Err(InstanceError::SchemaError(_))));
    }

    #[test]
    fn json_round_trip_keeps_field_order() {
        let t = tiny1();
        let js = t.to_json();
        assert_eq!(js, r#"{"m":2,"sets":[[0],[1],[0,1]],"cost":[1.0,1.0,1.5]}"#);
        assert_eq!(parse_instance(&js).unwrap(), t);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = random_instance(1, 5, 4, 0.5, (1.0, 5.0));
        let b = random_instance(1, 5, 4, 0.5, (1.0, 5.0));
        assert_eq!(a.to_json(), b.to_json());
        let full = random_instance(3, 4, 6, 1.0, (1.0, 2.0));
        assert!(full.sets().iter().all(|s| s.len() == 6));
        let sparse = random_instance(9, 3, 8, 0.05, (1.0, 2.0));
        assert_eq!(parse_instance(&sparse.to_json()).unwrap(), sparse);
    }

    #[test]
    fn integral_solution_serializes_as_bits() {
        let x = IntegralSolution(vec![true, false, true]);
        assert_eq!(serde_json::to_string(&x).unwrap(), "[1,0,1]");
        let back: IntegralSolution = serde_json::from_str("[1,0,1]").unwrap();
        assert_eq!(back, x);
        assert_eq!(x.cost(&[1.0, f64::INFINITY, 2.0]), 3.0);
    }
}
