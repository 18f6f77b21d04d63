//! Dense linear programming.
//!
//! [`solve_lp`] is a two-phase primal simplex over a dense tableau. Variable
//! bounds are handled by the bounded-variable method: a nonbasic column sits at
//! its lower or its upper bound, so `u ≤ d` style constraints never become
//! explicit rows. Entering and leaving columns follow Bland's rule, which makes
//! the method terminate on degenerate problems and keeps runs reproducible.
//!
//! [`solve_lp_bruteforce`] enumerates vertices and exists as a test oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("variable {0} has lower bound above upper bound")]
    InvalidBounds(usize),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("simplex exceeded {0} pivots")]
    MaxIterations(usize),
    #[error("brute-force oracle limited to 8 variables and 12 rows, got {vars} and {rows}")]
    DimensionTooLarge { vars: usize, rows: usize },
}

/// A linear program `opt cost·x  s.t.  matrix·x (senses) rhs,  lower ≤ x ≤ upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective_sense: ObjectiveSense,
    pub cost: Vec<f64>,
    pub constraint_matrix: Vec<Vec<f64>>,
    pub constraint_senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub variable_lower_bounds: Vec<f64>,
    pub variable_upper_bounds: Vec<f64>,
}

impl LpProblem {
    /// Problem with no rows and variables in `[0, ∞)`.
    pub fn new(objective_sense: ObjectiveSense, cost: Vec<f64>) -> Self {
        let n = cost.len();
        Self {
            objective_sense,
            cost,
            constraint_matrix: Vec::new(),
            constraint_senses: Vec::new(),
            rhs: Vec::new(),
            variable_lower_bounds: vec![0.0; n],
            variable_upper_bounds: vec![f64::INFINITY; n],
        }
    }

    pub fn minimize(cost: Vec<f64>) -> Self {
        Self::new(ObjectiveSense::Minimize, cost)
    }

    pub fn maximize(cost: Vec<f64>) -> Self {
        Self::new(ObjectiveSense::Maximize, cost)
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Appends a row and returns its index. `coeffs` may be shorter than the
    /// number of variables; missing entries are zero.
    pub fn add_row(&mut self, mut coeffs: Vec<f64>, sense: RowSense, rhs: f64) -> usize {
        coeffs.resize(self.num_vars(), 0.0);
        self.constraint_matrix.push(coeffs);
        self.constraint_senses.push(sense);
        self.rhs.push(rhs);
        self.rhs.len() - 1
    }

    /// Appends a variable and returns its index. `column` holds its
    /// coefficient in each existing row; missing entries are zero.
    pub fn add_column(&mut self, cost: f64, lower: f64, upper: f64, column: &[f64]) -> usize {
        self.cost.push(cost);
        self.variable_lower_bounds.push(lower);
        self.variable_upper_bounds.push(upper);
        for (i, row) in self.constraint_matrix.iter_mut().enumerate() {
            row.push(column.get(i).copied().unwrap_or(0.0));
        }
        self.cost.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.variable_lower_bounds[var] = lower;
        self.variable_upper_bounds[var] = upper;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        let m = self.num_rows();
        if self.constraint_matrix.len() != m || self.constraint_senses.len() != m {
            return Err(LpError::DimensionMismatch(format!(
                "{} matrix rows, {} senses, {} rhs entries",
                self.constraint_matrix.len(),
                self.constraint_senses.len(),
                m
            )));
        }
        if self.variable_lower_bounds.len() != n || self.variable_upper_bounds.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "{} costs but {} lower and {} upper bounds",
                n,
                self.variable_lower_bounds.len(),
                self.variable_upper_bounds.len()
            )));
        }
        if let Some(i) = self.constraint_matrix.iter().position(|r| r.len() != n) {
            return Err(LpError::DimensionMismatch(format!(
                "row {i} has {} entries, expected {n}",
                self.constraint_matrix[i].len()
            )));
        }
        if !self.cost.iter().all(|c| c.is_finite()) {
            return Err(LpError::NonFinite("cost"));
        }
        if !self.rhs.iter().all(|c| c.is_finite()) {
            return Err(LpError::NonFinite("rhs"));
        }
        if !self.constraint_matrix.iter().flatten().all(|c| c.is_finite()) {
            return Err(LpError::NonFinite("constraint matrix"));
        }
        for j in 0..n {
            let (l, u) = (self.variable_lower_bounds[j], self.variable_upper_bounds[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::InvalidBounds(j));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.cost, x)
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.constraint_matrix.iter().enumerate() {
            let lhs = dot(row, x);
            let v = match self.constraint_senses[i] {
                RowSense::Le => lhs - self.rhs[i],
                RowSense::Ge => self.rhs[i] - lhs,
                RowSense::Eq => (lhs - self.rhs[i]).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &xj) in x.iter().enumerate() {
            worst = worst
                .max(self.variable_lower_bounds[j] - xj)
                .max(xj - self.variable_upper_bounds[j]);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub pivot_tol: f64,
    /// Reduced-cost threshold for a column to be considered improving.
    pub optimality_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            gap_tol: 1e-7,
            pivot_tol: 1e-10,
            optimality_tol: 1e-9,
            max_iterations: 50_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per row, in the sign convention of the problem's sense:
    /// for minimization `≥` rows carry `y ≥ 0` and `≤` rows `y ≤ 0`.
    pub dual: Vec<f64>,
    /// `cost − Aᵀ·dual`; nonzero entries price the active variable bounds.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    /// Primal objective minus the full dual objective (rows and bounds).
    pub duality_gap: f64,
}

impl LpSolution {
    fn with_status(status: LpStatus, n: usize, m: usize) -> Self {
        Self {
            status,
            primal: vec![f64::NAN; n],
            dual: vec![f64::NAN; m],
            reduced_costs: vec![f64::NAN; n],
            objective: f64::NAN,
            primal_residual: f64::NAN,
            duality_gap: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How an original variable maps onto nonnegative tableau columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// `x = offset + col`
    Shift { col: usize, offset: f64 },
    /// `x = offset − col`
    Mirror { col: usize, offset: f64 },
    /// `x = plus − minus`
    Split { plus: usize, minus: usize },
}

struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m × ncols`, always equal to `B⁻¹·A0`.
    t: Vec<f64>,
    a0: Vec<f64>,
    rhs0: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    basic_row: Vec<Option<usize>>,
    at_upper: Vec<bool>,
    x_basic: Vec<f64>,
    art_start: usize,
    pivots: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let p = self.t[r * nc + q];
        for j in 0..nc {
            self.t[r * nc + j] /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for row in before.chunks_mut(nc).chain(after.chunks_mut(nc)) {
            let f = row[q];
            if f != 0.0 {
                for j in 0..nc {
                    row[j] -= f * prow[j];
                }
                row[q] = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.basic_row[leaving] = None;
        self.basis[r] = q;
        self.basic_row[q] = Some(r);
        self.pivots += 1;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    fn run_phase(&mut self, cost: &[f64], tol: &SolverTolerances) -> Result<PhaseOutcome, LpError> {
        loop {
            if self.pivots > tol.max_iterations {
                return Err(LpError::MaxIterations(tol.max_iterations));
            }
            let d = self.reduced_costs(cost);
            let entering = (0..self.ncols).find(|&j| {
                self.basic_row[j].is_none()
                    && self.upper[j] > 0.0
                    && ((!self.at_upper[j] && d[j] < -tol.optimality_tol)
                        || (self.at_upper[j] && d[j] > tol.optimality_tol))
            });
            let Some(q) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            let dir = if self.at_upper[q] { -1.0 } else { 1.0 };

            let mut step = self.upper[q];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.m {
                let delta = dir * self.at(i, q);
                let b = self.basis[i];
                let limit = if delta > tol.pivot_tol {
                    (self.x_basic[i] / delta).max(0.0)
                } else if delta < -tol.pivot_tol && self.upper[b].is_finite() {
                    ((self.upper[b] - self.x_basic[i]) / -delta).max(0.0)
                } else {
                    continue;
                };
                let better = match leave {
                    _ if limit < step => true,
                    Some((r, _)) if limit == step => b < self.basis[r],
                    None if limit == step => false,
                    _ => false,
                };
                if better {
                    step = limit;
                    leave = Some((i, delta < 0.0));
                }
            }
            if step.is_infinite() {
                return Ok(PhaseOutcome::Unbounded);
            }
            for i in 0..self.m {
                self.x_basic[i] -= dir * step * self.at(i, q);
            }
            match leave {
                None => {
                    self.at_upper[q] = !self.at_upper[q];
                    self.pivots += 1;
                }
                Some((r, to_upper)) => {
                    let entering_value = self.nonbasic_value(q) + dir * step;
                    let leaving = self.basis[r];
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[q] = false;
                    self.pivot(r, q);
                    self.x_basic[r] = entering_value;
                }
            }
        }
    }

    /// Recomputes basic values from `B⁻¹` (the artificial block of the tableau).
    fn refresh_basic_values(&mut self) {
        let mut resid = self.rhs0.clone();
        for j in 0..self.ncols {
            if self.basic_row[j].is_none() && self.at_upper[j] {
                let u = self.upper[j];
                for (i, r) in resid.iter_mut().enumerate() {
                    *r -= self.a0[i * self.ncols + j] * u;
                }
            }
        }
        for i in 0..self.m {
            self.x_basic[i] = (0..self.m).map(|k| self.at(i, self.art_start + k) * resid[k]).sum();
        }
    }

    fn column_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.ncols).map(|j| self.nonbasic_value(j)).collect();
        for (i, &b) in self.basis.iter().enumerate() {
            v[b] = self.x_basic[i];
        }
        v
    }

    /// `c_Bᵀ·B⁻¹`, in transformed-row coordinates.
    fn simplex_multipliers(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|k| (0..self.m).map(|i| cost[self.basis[i]] * self.at(i, self.art_start + k)).sum())
            .collect()
    }
}

/// Solves `problem` with the bounded-variable two-phase simplex.
pub fn solve_lp(problem: &LpProblem, tol: &SolverTolerances) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let m = problem.num_rows();
    let sign = match problem.objective_sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };

    // Column layout: structural | slacks | artificials.
    let mut maps = Vec::with_capacity(n);
    let mut col_upper = Vec::new();
    let mut col_cost = Vec::new();
    for j in 0..n {
        let (l, u) = (problem.variable_lower_bounds[j], problem.variable_upper_bounds[j]);
        let c = sign * problem.cost[j];
        if l.is_finite() {
            maps.push(VarMap::Shift { col: col_upper.len(), offset: l });
            col_upper.push(u - l);
            col_cost.push(c);
        } else if u.is_finite() {
            maps.push(VarMap::Mirror { col: col_upper.len(), offset: u });
            col_upper.push(f64::INFINITY);
            col_cost.push(-c);
        } else {
            let plus = col_upper.len();
            maps.push(VarMap::Split { plus, minus: plus + 1 });
            col_upper.extend([f64::INFINITY, f64::INFINITY]);
            col_cost.extend([c, -c]);
        }
    }
    let n_struct = col_upper.len();
    let slack_rows: Vec<usize> = (0..m).filter(|&i| problem.constraint_senses[i] != RowSense::Eq).collect();
    let art_start = n_struct + slack_rows.len();
    let ncols = art_start + m;
    col_upper.resize(art_start, f64::INFINITY);
    col_upper.resize(ncols, f64::INFINITY);
    col_cost.resize(ncols, 0.0);

    let mut a0 = vec![0.0; m * ncols];
    let mut rhs0 = vec![0.0; m];
    let mut row_sign = vec![1.0; m];
    for i in 0..m {
        let row = &problem.constraint_matrix[i];
        let mut b = problem.rhs[i];
        let base = i * ncols;
        for (j, map) in maps.iter().enumerate() {
            let a = row[j];
            if a == 0.0 {
                continue;
            }
            match *map {
                VarMap::Shift { col, offset } => {
                    a0[base + col] += a;
                    b -= a * offset;
                }
                VarMap::Mirror { col, offset } => {
                    a0[base + col] -= a;
                    b -= a * offset;
                }
                VarMap::Split { plus, minus } => {
                    a0[base + plus] += a;
                    a0[base + minus] -= a;
                }
            }
        }
        if let Some(s) = slack_rows.iter().position(|&r| r == i) {
            a0[base + n_struct + s] = match problem.constraint_senses[i] {
                RowSense::Le => 1.0,
                _ => -1.0,
            };
        }
        if b < 0.0 {
            row_sign[i] = -1.0;
            b = -b;
            for v in &mut a0[base..base + art_start] {
                *v = -*v;
            }
        }
        a0[base + art_start + i] = 1.0;
        rhs0[i] = b;
    }

    let mut tab = Tableau {
        m,
        ncols,
        t: a0.clone(),
        a0,
        rhs0: rhs0.clone(),
        upper: col_upper,
        basis: (art_start..ncols).collect(),
        basic_row: (0..ncols).map(|j| (j >= art_start).then(|| j - art_start)).collect(),
        at_upper: vec![false; ncols],
        x_basic: rhs0.clone(),
        art_start,
        pivots: 0,
    };

    // Phase 1.
    let phase1_cost: Vec<f64> = (0..ncols).map(|j| if j >= art_start { 1.0 } else { 0.0 }).collect();
    tab.run_phase(&phase1_cost, tol)?;
    tab.refresh_basic_values();
    let infeasibility: f64 = tab
        .basis
        .iter()
        .zip(&tab.x_basic)
        .filter(|(&b, _)| b >= art_start)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    let scale = 1.0 + rhs0.iter().fold(0.0f64, |a, &b| a.max(b));
    if infeasibility > tol.feas_tol * scale {
        return Ok(LpSolution::with_status(LpStatus::Infeasible, n, m));
    }
    for j in art_start..ncols {
        tab.upper[j] = 0.0;
        tab.at_upper[j] = false;
    }
    // Drive zero-valued artificials out of the basis where a usable pivot exists.
    for r in 0..m {
        if tab.basis[r] < art_start {
            continue;
        }
        let candidate = (0..art_start).find(|&j| tab.basic_row[j].is_none() && tab.at(r, j).abs() > 1e-7);
        if let Some(q) = candidate {
            let value = tab.nonbasic_value(q);
            tab.at_upper[q] = false;
            tab.pivot(r, q);
            tab.x_basic[r] = value;
        } else {
            tab.x_basic[r] = 0.0;
        }
    }
    tab.refresh_basic_values();

    // Phase 2.
    if let PhaseOutcome::Unbounded = tab.run_phase(&col_cost, tol)? {
        return Ok(LpSolution::with_status(LpStatus::Unbounded, n, m));
    }
    tab.refresh_basic_values();

    let values = tab.column_values();
    let primal: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shift { col, offset } => offset + values[col],
            VarMap::Mirror { col, offset } => offset - values[col],
            VarMap::Split { plus, minus } => values[plus] - values[minus],
        })
        .collect();
    let multipliers = tab.simplex_multipliers(&col_cost);
    let dual: Vec<f64> = (0..m).map(|i| sign * row_sign[i] * multipliers[i]).collect();
    Ok(finish_solution(problem, primal, dual))
}

/// Fills objective, reduced costs, residual and gap from primal and dual vectors.
fn finish_solution(problem: &LpProblem, primal: Vec<f64>, dual: Vec<f64>) -> LpSolution {
    let n = problem.num_vars();
    let sign = match problem.objective_sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    let reduced_costs: Vec<f64> = (0..n)
        .map(|j| {
            problem.cost[j]
                - problem
                    .constraint_matrix
                    .iter()
                    .zip(&dual)
                    .map(|(row, y)| row[j] * y)
                    .sum::<f64>()
        })
        .collect();
    let objective = problem.objective_value(&primal);
    // Dual objective in minimization form.
    let mut dual_obj = sign * dot(&problem.rhs, &dual);
    for j in 0..n {
        let r = sign * reduced_costs[j];
        let bound = if r > 0.0 {
            problem.variable_lower_bounds[j]
        } else {
            problem.variable_upper_bounds[j]
        };
        dual_obj += if bound.is_finite() { r * bound } else { r * primal[j] };
    }
    let duality_gap = sign * objective - dual_obj;
    LpSolution {
        status: LpStatus::Optimal,
        primal_residual: problem.max_violation(&primal),
        primal,
        dual,
        reduced_costs,
        objective,
        duality_gap,
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (p, pv) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pv < 1e-11 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Row(usize),
    Lower(usize),
    Upper(usize),
    Box,
}

struct Halfspace {
    coeffs: Vec<f64>,
    sense: RowSense,
    rhs: f64,
    kind: Kind,
}

fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + n - k {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Best vertex of the problem with infinite bounds replaced by `±bigm`.
fn enumerate_vertices(problem: &LpProblem, bigm: f64) -> Option<(Vec<f64>, f64, bool, Vec<Vec<usize>>, Vec<Halfspace>)> {
    let n = problem.num_vars();
    let sign = match problem.objective_sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    let mut hs = Vec::new();
    for i in 0..problem.num_rows() {
        hs.push(Halfspace {
            coeffs: problem.constraint_matrix[i].clone(),
            sense: problem.constraint_senses[i],
            rhs: problem.rhs[i],
            kind: Kind::Row(i),
        });
    }
    for j in 0..n {
        let unit: Vec<f64> = (0..n).map(|k| if k == j { 1.0 } else { 0.0 }).collect();
        let (l, u) = (problem.variable_lower_bounds[j], problem.variable_upper_bounds[j]);
        hs.push(Halfspace {
            coeffs: unit.clone(),
            sense: RowSense::Ge,
            rhs: if l.is_finite() { l } else { -bigm },
            kind: if l.is_finite() { Kind::Lower(j) } else { Kind::Box },
        });
        hs.push(Halfspace {
            coeffs: unit,
            sense: RowSense::Le,
            rhs: if u.is_finite() { u } else { bigm },
            kind: if u.is_finite() { Kind::Upper(j) } else { Kind::Box },
        });
    }
    let feasible = |x: &[f64]| {
        hs.iter().all(|h| {
            let lhs = dot(&h.coeffs, x);
            let tol = 1e-9 * (1.0 + h.rhs.abs());
            match h.sense {
                RowSense::Le => lhs <= h.rhs + tol,
                RowSense::Ge => lhs >= h.rhs - tol,
                RowSense::Eq => (lhs - h.rhs).abs() <= tol,
            }
        })
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for_each_combination(hs.len(), n, |subset| {
        let a: Vec<Vec<f64>> = subset.iter().map(|&s| hs[s].coeffs.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&s| hs[s].rhs).collect();
        if let Some(x) = solve_dense(a, b) {
            if feasible(&x) {
                let obj = sign * problem.objective_value(&x);
                if best.as_ref().map_or(true, |(_, v)| obj < *v - 1e-12) {
                    best = Some((x, obj));
                }
            }
        }
    });
    let (x, obj) = best?;
    // Record every basis attaining the optimum for the dual recovery.
    let mut optimal_subsets = Vec::new();
    for_each_combination(hs.len(), n, |subset| {
        let active = subset.iter().all(|&s| {
            let h = &hs[s];
            (dot(&h.coeffs, &x) - h.rhs).abs() <= 1e-8 * (1.0 + h.rhs.abs())
        });
        if active {
            optimal_subsets.push(subset.to_vec());
        }
    });
    let touches_box = hs
        .iter()
        .any(|h| h.kind == Kind::Box && (dot(&h.coeffs, &x) - h.rhs).abs() <= 1e-6 * bigm);
    Some((x, sign * obj, touches_box, optimal_subsets, hs))
}

/// Exact optimum by enumerating every vertex. Test oracle for [`solve_lp`];
/// limited to 8 variables and 12 rows.
pub fn solve_lp_bruteforce(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let m = problem.num_rows();
    if n > 8 || m > 12 {
        return Err(LpError::DimensionTooLarge { vars: n, rows: m });
    }
    const BIGM: f64 = 1e6;
    let Some((x, obj, touches_box, subsets, hs)) = enumerate_vertices(problem, BIGM) else {
        return Ok(LpSolution::with_status(LpStatus::Infeasible, n, m));
    };
    if touches_box {
        let wider = enumerate_vertices(problem, 2.0 * BIGM).map(|r| r.1);
        if wider.map_or(true, |w| (w - obj).abs() > 1e-6 * (1.0 + obj.abs())) {
            return Ok(LpSolution::with_status(LpStatus::Unbounded, n, m));
        }
    }
    let sign = match problem.objective_sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    // KKT multipliers of some optimal basis with the right signs.
    let c_min: Vec<f64> = problem.cost.iter().map(|c| sign * c).collect();
    let mut dual = vec![0.0; m];
    'subsets: for subset in &subsets {
        let at: Vec<Vec<f64>> = (0..n).map(|j| subset.iter().map(|&s| hs[s].coeffs[j]).collect()).collect();
        let Some(lambda) = solve_dense(at, c_min.clone()) else { continue };
        let mut y = vec![0.0; m];
        for (&s, &l) in subset.iter().zip(&lambda) {
            let ok = match hs[s].sense {
                RowSense::Ge => l >= -1e-9,
                RowSense::Le => l <= 1e-9,
                RowSense::Eq => true,
            };
            if !ok || hs[s].kind == Kind::Box {
                continue 'subsets;
            }
            if let Kind::Row(i) = hs[s].kind {
                y[i] += sign * l;
            }
        }
        dual = y;
        break;
    }
    let mut sol = finish_solution(problem, x, dual);
    sol.objective = obj;
    Ok(sol)
}
