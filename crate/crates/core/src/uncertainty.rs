//! Cost uncertainty sets and worst-case evaluation.
//!
//! Four shapes are supported, all as perturbations of a nominal cost `c0`:
//!
//! * `PolyhedralDirect`: `c = c0 + u`, `0 ≤ u ≤ d`, `A u ≤ b`.
//! * `PolyhedralAffine`: `c = c0 + C δ`, `δ ≥ 0`, `A δ ≤ b`.
//! * `EllipsoidDirect`: `c = c0 + u`, `u ≥ 0`, `‖D⁻¹u‖₂ ≤ 1`.
//! * `EllipsoidAffine`: `c = c0 + C δ`, `‖D⁻¹δ‖₂ ≤ 1`, optionally `δ ≥ 0`.
//!
//! Budget sets ("at most k coordinates deviate, each by at most d_j") are built
//! by [`UncertaintySet::budget`] directly in `PolyhedralDirect` form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{dot, solve_lp, LpError, LpProblem, LpStatus, RowSense, SolverTolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} must be finite and nonnegative")]
    NegativeData(&'static str),
    #[error("generator {0} is the zero vector")]
    ZeroGenerator(usize),
    #[error("shape matrix D is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("perturbation coordinate {0} is unbounded")]
    UnboundedUncertainty(usize),
    #[error("worst case is unbounded")]
    UnboundedWorstCase,
    #[error("column {0} has zero width; normalize the set first")]
    DegenerateWidth(usize),
    #[error("operation needs a {expected} set, got {got}")]
    VariantMismatch { expected: &'static str, got: &'static str },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum UncertaintySet {
    PolyhedralDirect {
        c0: Vec<f64>,
        /// Per-coordinate caps, possibly `+∞`.
        d: Vec<f64>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    PolyhedralAffine {
        c0: Vec<f64>,
        /// `n × k`, column `r` is generator `c^r`.
        c: Vec<Vec<f64>>,
        /// `m_A × k`.
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    EllipsoidDirect {
        c0: Vec<f64>,
        shape: Vec<Vec<f64>>,
    },
    EllipsoidAffine {
        c0: Vec<f64>,
        c: Vec<Vec<f64>>,
        /// `k × k`.
        shape: Vec<Vec<f64>>,
        sign_constrained: bool,
    },
}

fn dims<T>(what: String) -> Result<T, UncertaintyError> {
    Err(UncertaintyError::DimensionMismatch(what))
}

fn nonneg(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x >= 0.0)
}

fn nonneg_matrix(m: &[Vec<f64>]) -> bool {
    m.iter().all(|r| nonneg(r))
}

pub(crate) fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows, cols, |i, j| m[i][j])
}

fn symmetrize(m: &mut [Vec<f64>]) -> bool {
    let k = m.len();
    let mut changed = false;
    for i in 0..k {
        for j in i + 1..k {
            if m[i][j] != m[j][i] {
                let avg = 0.5 * (m[i][j] + m[j][i]);
                m[i][j] = avg;
                m[j][i] = avg;
                changed = true;
            }
        }
    }
    changed
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn eigen_extremes(m: &[Vec<f64>]) -> (f64, f64) {
    let eig = SymmetricEigen::new(to_dmatrix(m));
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

impl UncertaintySet {
    /// Budget set: `u_j ∈ [0, d_j]` with `Σ u_j/d_j ≤ k`, which is the convex
    /// hull of "at most `k` coordinates deviate by up to `d_j`" for integral `k`.
    pub fn budget(c0: Vec<f64>, d: Vec<f64>, k: f64) -> Result<Self, UncertaintyError> {
        if !nonneg(&d) {
            return Err(UncertaintyError::NegativeData("budget deviations d"));
        }
        if !(k.is_finite() && k >= 0.0) {
            return Err(UncertaintyError::NegativeData("budget k"));
        }
        let row = d.iter().map(|&dj| if dj > 0.0 { 1.0 / dj } else { 0.0 }).collect();
        let u = Self::PolyhedralDirect { c0, d, a: vec![row], b: vec![k] };
        u.validate()?;
        Ok(u)
    }

    /// Direct ellipsoid; an asymmetric `shape` is replaced by `(D + Dᵀ)/2`.
    pub fn ellipsoid_direct(c0: Vec<f64>, mut shape: Vec<Vec<f64>>) -> Result<Self, UncertaintyError> {
        if symmetrize(&mut shape) {
            log::warn!("ellipsoid shape matrix was not symmetric; using (D + Dᵀ)/2");
        }
        let u = Self::EllipsoidDirect { c0, shape };
        u.validate()?;
        Ok(u)
    }

    /// Affine ellipsoid; an asymmetric `shape` is replaced by `(D + Dᵀ)/2`.
    pub fn ellipsoid_affine(
        c0: Vec<f64>,
        c: Vec<Vec<f64>>,
        mut shape: Vec<Vec<f64>>,
        sign_constrained: bool,
    ) -> Result<Self, UncertaintyError> {
        if symmetrize(&mut shape) {
            log::warn!("ellipsoid shape matrix was not symmetric; using (D + Dᵀ)/2");
        }
        let u = Self::EllipsoidAffine { c0, c, shape, sign_constrained };
        u.validate()?;
        Ok(u)
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::PolyhedralDirect { .. } => "poly_direct",
            Self::PolyhedralAffine { .. } => "poly_affine",
            Self::EllipsoidDirect { .. } => "ellipsoid_direct",
            Self::EllipsoidAffine { .. } => "ellipsoid_affine",
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        matches!(self, Self::PolyhedralDirect { .. } | Self::PolyhedralAffine { .. })
    }

    pub fn c0(&self) -> &[f64] {
        match self {
            Self::PolyhedralDirect { c0, .. }
            | Self::PolyhedralAffine { c0, .. }
            | Self::EllipsoidDirect { c0, .. }
            | Self::EllipsoidAffine { c0, .. } => c0,
        }
    }

    pub fn dim(&self) -> usize {
        self.c0().len()
    }

    /// Number of perturbation coordinates: `n` for direct sets, the generator
    /// count for affine ones.
    pub fn num_generators(&self) -> usize {
        match self {
            Self::PolyhedralDirect { c0, .. } | Self::EllipsoidDirect { c0, .. } => c0.len(),
            Self::PolyhedralAffine { c, .. } | Self::EllipsoidAffine { c, .. } => {
                c.first().map_or(0, Vec::len)
            }
        }
    }

    pub fn generators(&self) -> Option<&[Vec<f64>]> {
        match self {
            Self::PolyhedralAffine { c, .. } | Self::EllipsoidAffine { c, .. } => Some(c),
            _ => None,
        }
    }

    /// `Cᵀx` for affine sets, `x` for direct ones.
    pub fn perturbation_weights(&self, x: &[f64]) -> Vec<f64> {
        match self.generators() {
            Some(c) => {
                let k = self.num_generators();
                (0..k).map(|r| c.iter().zip(x).map(|(row, xj)| row[r] * xj).sum()).collect()
            }
            None => x.to_vec(),
        }
    }

    /// Cost vector for a perturbation `p` (`u` or `δ`).
    pub fn scenario(&self, p: &[f64]) -> Vec<f64> {
        let mut c = self.c0().to_vec();
        match self.generators() {
            Some(gen) => {
                for (j, row) in gen.iter().enumerate() {
                    c[j] += dot(row, p);
                }
            }
            None => {
                for (cj, pj) in c.iter_mut().zip(p) {
                    *cj += pj;
                }
            }
        }
        c
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let n = self.dim();
        if !nonneg(self.c0()) {
            return Err(UncertaintyError::NegativeData("nominal cost c0"));
        }
        let check_a = |a: &[Vec<f64>], b: &[f64], cols: usize| -> Result<(), UncertaintyError> {
            if a.len() != b.len() {
                return dims(format!("A has {} rows, b has {} entries", a.len(), b.len()));
            }
            if a.iter().any(|r| r.len() != cols) {
                return dims(format!("every row of A needs {cols} entries"));
            }
            if !nonneg_matrix(a) {
                return Err(UncertaintyError::NegativeData("A"));
            }
            if !nonneg(b) {
                return Err(UncertaintyError::NegativeData("b"));
            }
            Ok(())
        };
        let check_c = |c: &[Vec<f64>]| -> Result<usize, UncertaintyError> {
            if c.len() != n {
                return dims(format!("C has {} rows, expected {n}", c.len()));
            }
            let k = c.first().map_or(0, Vec::len);
            if c.iter().any(|r| r.len() != k) {
                return dims("C rows differ in length".into());
            }
            if !nonneg_matrix(c) {
                return Err(UncertaintyError::NegativeData("C"));
            }
            if let Some(r) = (0..k).find(|&r| c.iter().all(|row| row[r] == 0.0)) {
                return Err(UncertaintyError::ZeroGenerator(r));
            }
            Ok(k)
        };
        let check_shape = |d: &[Vec<f64>], k: usize| -> Result<(), UncertaintyError> {
            if d.len() != k || d.iter().any(|r| r.len() != k) {
                return dims(format!("D must be {k}×{k}"));
            }
            if d.iter().flatten().any(|v| !v.is_finite()) {
                return Err(UncertaintyError::NotPositiveDefinite);
            }
            let scale = d.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..k {
                for j in 0..i {
                    if (d[i][j] - d[j][i]).abs() > 1e-12 * scale.max(1.0) {
                        return Err(UncertaintyError::NotPositiveDefinite);
                    }
                }
            }
            if k > 0 && eigen_extremes(d).0 <= 1e-12 * scale {
                return Err(UncertaintyError::NotPositiveDefinite);
            }
            Ok(())
        };
        match self {
            Self::PolyhedralDirect { d, a, b, .. } => {
                if d.len() != n {
                    return dims(format!("d has {} entries, expected {n}", d.len()));
                }
                if d.iter().any(|v| v.is_nan() || *v < 0.0) {
                    return Err(UncertaintyError::NegativeData("d"));
                }
                check_a(a, b, n)
            }
            Self::PolyhedralAffine { c, a, b, .. } => {
                let k = check_c(c)?;
                check_a(a, b, k)
            }
            Self::EllipsoidDirect { shape, .. } => check_shape(shape, n),
            Self::EllipsoidAffine { c, shape, .. } => {
                let k = check_c(c)?;
                check_shape(shape, k)
            }
        }
    }
}

/// Removals performed by [`normalize`], in original indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Rows with `b_i = 0`, dropped after zeroing the coordinates they pin.
    pub dropped_rows: Vec<usize>,
    /// Direct coordinates forced to zero perturbation by a `b_i = 0` row.
    pub pinned_coordinates: Vec<usize>,
    /// Direct coordinates with no row constraint, folded as `c0_j += d_j`.
    pub folded: Vec<(usize, f64)>,
    /// Affine generators forced to zero by a `b_i = 0` row.
    pub removed_generators: Vec<usize>,
}

impl FoldReport {
    pub fn is_empty(&self) -> bool {
        self.dropped_rows.is_empty()
            && self.pinned_coordinates.is_empty()
            && self.folded.is_empty()
            && self.removed_generators.is_empty()
    }
}

/// Brings a polyhedral set to the form `b = 1` with every perturbation
/// coordinate constrained by some row. Ellipsoids are returned unchanged.
pub fn normalize(u: &UncertaintySet) -> Result<(UncertaintySet, FoldReport), UncertaintyError> {
    u.validate()?;
    let mut report = FoldReport::default();
    let out = match u {
        UncertaintySet::PolyhedralDirect { c0, d, a, b } => {
            let n = c0.len();
            let mut c0 = c0.clone();
            let mut d = d.clone();
            let mut a = a.clone();
            for (i, row) in a.iter().enumerate() {
                if b[i] == 0.0 {
                    report.dropped_rows.push(i);
                    for j in 0..n {
                        if row[j] > 0.0 && d[j] > 0.0 {
                            d[j] = 0.0;
                            report.pinned_coordinates.push(j);
                        }
                    }
                }
            }
            report.pinned_coordinates.sort_unstable();
            report.pinned_coordinates.dedup();
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for (i, row) in a.iter_mut().enumerate() {
                if b[i] == 0.0 {
                    continue;
                }
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if d[j] > 0.0 { *v / b[i] } else { 0.0 };
                }
                rows.push(row.clone());
                rhs.push(1.0);
            }
            for j in 0..n {
                if d[j] > 0.0 && rows.iter().all(|r| r[j] == 0.0) {
                    if d[j].is_infinite() {
                        return Err(UncertaintyError::UnboundedUncertainty(j));
                    }
                    c0[j] += d[j];
                    report.folded.push((j, d[j]));
                    d[j] = 0.0;
                }
            }
            UncertaintySet::PolyhedralDirect { c0, d, a: rows, b: rhs }
        }
        UncertaintySet::PolyhedralAffine { c0, c, a, b } => {
            let k = c.first().map_or(0, Vec::len);
            let mut keep = vec![true; k];
            for (i, row) in a.iter().enumerate() {
                if b[i] == 0.0 {
                    report.dropped_rows.push(i);
                    for r in 0..k {
                        if row[r] > 0.0 {
                            keep[r] = false;
                        }
                    }
                }
            }
            report.removed_generators = (0..k).filter(|&r| !keep[r]).collect();
            let kept: Vec<usize> = (0..k).filter(|&r| keep[r]).collect();
            let new_c: Vec<Vec<f64>> = c.iter().map(|row| kept.iter().map(|&r| row[r]).collect()).collect();
            let mut rows = Vec::new();
            for (i, row) in a.iter().enumerate() {
                if b[i] > 0.0 {
                    rows.push(kept.iter().map(|&r| row[r] / b[i]).collect::<Vec<f64>>());
                }
            }
            if let Some(pos) = (0..kept.len()).find(|&p| rows.iter().all(|r| r[p] == 0.0)) {
                return Err(UncertaintyError::UnboundedUncertainty(kept[pos]));
            }
            let m = rows.len();
            UncertaintySet::PolyhedralAffine { c0: c0.clone(), c: new_c, a: rows, b: vec![1.0; m] }
        }
        other => other.clone(),
    };
    Ok((out, report))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WidthParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
}

fn generator_extremes(c: &[Vec<f64>]) -> (Option<f64>, Option<f64>) {
    let entries = c.iter().flatten().copied();
    let c_min = entries.clone().filter(|&v| v > 0.0).reduce(f64::min);
    let c_max = entries.reduce(f64::max).filter(|&v| v > 0.0);
    (c_min, c_max)
}

/// Width parameters of a normalized set.
///
/// For direct polyhedral sets the caps `u_j ≤ d_j` count as rows
/// `u_j/d_j ≤ 1`, so coordinate `j` has width `β_j = max(max_i a_ij, 1/d_j)`;
/// `β = min_j β_j` and `γ = max_j β_j` over coordinates with `d_j > 0`.
/// Affine sets use `β = min_r max_i a_ir` and `γ = max a_ir`.
pub fn width_params(u: &UncertaintySet) -> Result<WidthParams, UncertaintyError> {
    let mut w = WidthParams::default();
    match u {
        UncertaintySet::PolyhedralDirect { d, a, .. } => {
            for (j, &dj) in d.iter().enumerate() {
                if dj <= 0.0 {
                    continue;
                }
                let col_max = a.iter().map(|r| r[j]).fold(0.0f64, f64::max);
                let bj = col_max.max(1.0 / dj);
                if bj <= 0.0 {
                    return Err(UncertaintyError::DegenerateWidth(j));
                }
                w.beta = Some(w.beta.map_or(bj, |b| b.min(bj)));
                w.gamma = Some(w.gamma.map_or(bj, |g| g.max(bj)));
            }
        }
        UncertaintySet::PolyhedralAffine { c, a, .. } => {
            let k = c.first().map_or(0, Vec::len);
            for r in 0..k {
                let br = a.iter().map(|row| row[r]).fold(0.0f64, f64::max);
                if br <= 0.0 {
                    return Err(UncertaintyError::DegenerateWidth(r));
                }
                w.beta = Some(w.beta.map_or(br, |b| b.min(br)));
                w.gamma = Some(w.gamma.map_or(br, |g| g.max(br)));
            }
            (w.c_min, w.c_max) = generator_extremes(c);
        }
        UncertaintySet::EllipsoidDirect { shape, .. } => {
            let (lo, hi) = eigen_extremes(shape);
            (w.lambda_min, w.lambda_max) = (Some(lo), Some(hi));
        }
        UncertaintySet::EllipsoidAffine { c, shape, .. } => {
            let (lo, hi) = eigen_extremes(shape);
            (w.lambda_min, w.lambda_max) = (Some(lo), Some(hi));
            (w.c_min, w.c_max) = generator_extremes(c);
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    /// `max_{c∈C} c·x − c0·x`.
    pub value: f64,
    pub witness_c: Vec<f64>,
    /// The `u` or `δ` producing `witness_c`.
    pub witness_perturbation: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstCaseOptions {
    pub lp: SolverTolerances,
    /// Maximum number of tangent cuts for sign-constrained ellipsoids.
    pub max_cuts: usize,
    /// Accept the unconstrained maximizer when it is already nonnegative.
    pub closed_form_shortcut: bool,
    /// Refine the cutting-plane iterate by solving the KKT system on its support.
    pub polish: bool,
    /// Solve the free-sign problem with the cutting-plane method instead of in
    /// closed form. Used to cross-check the two.
    pub cutting_plane_free_sign: bool,
}

impl Default for WorstCaseOptions {
    fn default() -> Self {
        Self {
            lp: SolverTolerances::default(),
            max_cuts: 500,
            closed_form_shortcut: true,
            polish: true,
            cutting_plane_free_sign: false,
        }
    }
}

pub fn worst_case(u: &UncertaintySet, x: &[f64]) -> Result<WorstCase, UncertaintyError> {
    worst_case_with(u, x, &WorstCaseOptions::default())
}

pub fn worst_case_with(
    u: &UncertaintySet,
    x: &[f64],
    opts: &WorstCaseOptions,
) -> Result<WorstCase, UncertaintyError> {
    if x.len() != u.dim() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "x has {} entries, set has dimension {}",
            x.len(),
            u.dim()
        )));
    }
    let g = u.perturbation_weights(x);
    let p = match u {
        UncertaintySet::PolyhedralDirect { d, a, b, .. } => polyhedral_max(&g, a, b, Some(d), &opts.lp)?,
        UncertaintySet::PolyhedralAffine { a, b, .. } => polyhedral_max(&g, a, b, None, &opts.lp)?,
        UncertaintySet::EllipsoidDirect { shape, .. } => ellipsoid_max(&g, shape, true, opts)?,
        UncertaintySet::EllipsoidAffine { shape, sign_constrained, .. } => {
            if *sign_constrained || opts.cutting_plane_free_sign {
                ellipsoid_max(&g, shape, *sign_constrained, opts)?
            } else {
                ellipsoid_free_closed_form(&g, shape)
            }
        }
    };
    Ok(WorstCase { value: dot(&g, &p), witness_c: u.scenario(&p), witness_perturbation: p })
}

/// `max g·p` over `A p ≤ b`, `0 ≤ p ≤ caps`, restricted to the support of `g`.
fn polyhedral_max(
    g: &[f64],
    a: &[Vec<f64>],
    b: &[f64],
    caps: Option<&[f64]>,
    tol: &SolverTolerances,
) -> Result<Vec<f64>, UncertaintyError> {
    let k = g.len();
    let support: Vec<usize> = (0..k).filter(|&r| g[r] > 0.0 && caps.map_or(true, |d| d[r] > 0.0)).collect();
    let mut p = vec![0.0; k];
    if support.is_empty() {
        return Ok(p);
    }
    let mut lp = LpProblem::maximize(support.iter().map(|&r| g[r]).collect());
    for (row, &bi) in a.iter().zip(b) {
        let coeffs: Vec<f64> = support.iter().map(|&r| row[r]).collect();
        if coeffs.iter().any(|&v| v != 0.0) {
            lp.add_row(coeffs, RowSense::Le, bi);
        }
    }
    if let Some(d) = caps {
        for (s, &r) in support.iter().enumerate() {
            lp.set_bounds(s, 0.0, d[r]);
        }
    }
    let sol = solve_lp(&lp, tol)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => return Err(UncertaintyError::UnboundedWorstCase),
        LpStatus::Infeasible => unreachable!("p = 0 is always feasible"),
    }
    for (s, &r) in support.iter().enumerate() {
        p[r] = sol.primal[s].max(0.0);
    }
    Ok(p)
}

/// `argmax g·δ` over `‖D⁻¹δ‖ ≤ 1`: `δ = D²g/‖Dg‖`.
fn ellipsoid_free_closed_form(g: &[f64], shape: &[Vec<f64>]) -> Vec<f64> {
    let d = to_dmatrix(shape);
    let dg = &d * DVector::from_column_slice(g);
    let norm = dg.norm();
    if norm == 0.0 {
        return vec![0.0; g.len()];
    }
    (&d * dg / norm).iter().copied().collect()
}

struct EllipsoidGeometry {
    /// `M = D⁻²`, so the constraint is `δᵀMδ ≤ 1`.
    metric: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl EllipsoidGeometry {
    fn new(shape: &[Vec<f64>]) -> Result<Self, UncertaintyError> {
        let d = to_dmatrix(shape);
        let dinv = d.clone().try_inverse().ok_or(UncertaintyError::NotPositiveDefinite)?;
        let metric = &dinv * &dinv;
        Ok(Self { metric, d })
    }

    fn norm(&self, p: &DVector<f64>) -> f64 {
        p.dot(&(&self.metric * p)).max(0.0).sqrt()
    }
}

/// `max g·δ` over `‖D⁻¹δ‖ ≤ 1`, with `δ ≥ 0` when `sign_constrained`.
///
/// Kelley's cutting planes on the box `|δ_j| ≤ ‖De_j‖` locate the optimal
/// face; the KKT system on that face is then solved directly and an
/// active-set loop corrects the face if needed. The returned point is always
/// feasible.
fn ellipsoid_max(
    g: &[f64],
    shape: &[Vec<f64>],
    sign_constrained: bool,
    opts: &WorstCaseOptions,
) -> Result<Vec<f64>, UncertaintyError> {
    let k = g.len();
    if g.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; k]);
    }
    let geo = EllipsoidGeometry::new(shape)?;
    let gv = DVector::from_column_slice(g);

    if opts.closed_form_shortcut {
        let free = ellipsoid_free_closed_form(g, shape);
        if !sign_constrained || free.iter().all(|&v| v >= 0.0) {
            return Ok(free);
        }
    }

    // Kelley.
    let d2 = &geo.d * &geo.d;
    let radius: Vec<f64> = (0..k).map(|j| d2[(j, j)].max(0.0).sqrt()).collect();
    let mut lp = LpProblem::maximize(g.to_vec());
    for j in 0..k {
        let lo = if sign_constrained { 0.0 } else { -radius[j] };
        lp.set_bounds(j, lo, radius[j]);
    }
    let mut best_lb = f64::NEG_INFINITY;
    let mut best = DVector::zeros(k);
    let mut last = DVector::zeros(k);
    for _ in 0..opts.max_cuts {
        let sol = solve_lp(&lp, &opts.lp)?;
        if sol.status != LpStatus::Optimal {
            break;
        }
        let p = DVector::from_column_slice(&sol.primal);
        let f = geo.norm(&p);
        let scaled = if f > 1.0 { &p / f } else { p.clone() };
        let lb = gv.dot(&scaled);
        if lb > best_lb {
            best_lb = lb;
            best = scaled;
        }
        last = p.clone();
        let ub = sol.objective;
        if f <= 1.0 + 1e-8 || ub - best_lb <= 1e-8 * (1.0 + ub.abs()) {
            break;
        }
        let cut = &geo.metric * &p / f;
        lp.add_row(cut.iter().copied().collect(), RowSense::Le, 1.0);
    }

    if opts.polish {
        let thresh = 1e-7 * last.amax().max(1e-300);
        let start: Vec<usize> = (0..k).filter(|&j| !sign_constrained || last[j] > thresh).collect();
        if let Some(p) = active_set_polish(&gv, &geo.metric, start, sign_constrained) {
            if gv.dot(&p) >= best_lb - 1e-12 * (1.0 + best_lb.abs()) {
                best = p;
            }
        }
    }
    let mut out: Vec<f64> = best.iter().copied().collect();
    if sign_constrained {
        for v in &mut out {
            *v = v.max(0.0);
        }
    }
    let f = geo.norm(&DVector::from_column_slice(&out));
    if f > 1.0 {
        for v in &mut out {
            *v /= f;
        }
    }
    Ok(out)
}

/// Exact maximizer of `g·δ` over `δᵀMδ ≤ 1` with `δ_j = 0` off `support`,
/// i.e. `δ_S = M_SS⁻¹g_S / √(g_Sᵀ M_SS⁻¹ g_S)`.
fn face_solution(g: &DVector<f64>, metric: &DMatrix<f64>, support: &[usize]) -> Option<(DVector<f64>, f64)> {
    let s = support.len();
    let msub = DMatrix::from_fn(s, s, |a, b| metric[(support[a], support[b])]);
    let gsub = DVector::from_fn(s, |a, _| g[support[a]]);
    let sol = msub.cholesky()?.solve(&gsub);
    let scale = gsub.dot(&sol);
    if !(scale > 0.0) {
        return None;
    }
    let scale = scale.sqrt();
    let mut p = DVector::zeros(g.len());
    for (a, &j) in support.iter().enumerate() {
        p[j] = sol[a] / scale;
    }
    Some((p, scale))
}

fn active_set_polish(
    g: &DVector<f64>,
    metric: &DMatrix<f64>,
    mut support: Vec<usize>,
    sign_constrained: bool,
) -> Option<DVector<f64>> {
    let k = g.len();
    if !sign_constrained {
        return face_solution(g, metric, &(0..k).collect::<Vec<_>>()).map(|r| r.0);
    }
    if support.is_empty() {
        support.push(g.imax());
    }
    let gscale = g.amax();
    for _ in 0..4 * k + 4 {
        let (p, s) = face_solution(g, metric, &support)?;
        let (neg_pos, neg_val) = support
            .iter()
            .enumerate()
            .map(|(a, &j)| (a, p[j]))
            .fold((0, 0.0), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if neg_val < -1e-14 {
            support.remove(neg_pos);
            if support.is_empty() {
                return None;
            }
            continue;
        }
        // Multiplier of δ_j ≥ 0 off the support must be nonnegative.
        let mp = metric * &p;
        let violator = (0..k)
            .filter(|j| !support.contains(j))
            .map(|j| (j, g[j] - s * mp[j]))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        match violator {
            Some((j, v)) if v > 1e-12 * gscale => {
                support.push(j);
                support.sort_unstable();
            }
            _ => return Some(p),
        }
    }
    None
}

/// The polyhedral robust counterpart over `Q` as a single LP.
#[derive(Clone, Debug)]
pub struct Reformulation {
    pub lp: LpProblem,
    /// The first `num_x` columns are the original variables.
    pub num_x: usize,
    /// Column of `θ_i` for each row of `A`.
    pub theta: Vec<usize>,
    /// Column of `y_j` for each direct coordinate with finite positive cap.
    pub y: Vec<Option<usize>>,
}

/// Appends the LP dual of the inner maximization to `base_lp`:
///
/// * direct: `min c0·x + b·θ + d·y`, `Aᵀθ + y ≥ x` on coordinates with `d_j > 0`;
/// * affine: `min c0·x + b·θ`, `Aᵀθ ≥ Cᵀx`.
///
/// The first `n` columns of `base_lp` are the decision variables; their costs
/// are replaced by the set's nominal cost.
pub fn dual_reformulation(u: &UncertaintySet, base_lp: &LpProblem) -> Result<Reformulation, UncertaintyError> {
    let n = u.dim();
    if base_lp.num_vars() < n {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "base LP has {} columns, set has dimension {n}",
            base_lp.num_vars()
        )));
    }
    let mut lp = base_lp.clone();
    lp.cost[..n].copy_from_slice(u.c0());
    match u {
        UncertaintySet::PolyhedralDirect { d, a, b, .. } => {
            let theta: Vec<usize> =
                b.iter().map(|&bi| lp.add_column(bi, 0.0, f64::INFINITY, &[])).collect();
            let y: Vec<Option<usize>> = d
                .iter()
                .map(|&dj| (dj > 0.0 && dj.is_finite()).then(|| lp.add_column(dj, 0.0, f64::INFINITY, &[])))
                .collect();
            for j in 0..n {
                if d[j] <= 0.0 {
                    continue;
                }
                let mut row = vec![0.0; lp.num_vars()];
                row[j] = -1.0;
                for (i, &t) in theta.iter().enumerate() {
                    row[t] = a[i][j];
                }
                if let Some(yj) = y[j] {
                    row[yj] = 1.0;
                }
                lp.add_row(row, RowSense::Ge, 0.0);
            }
            Ok(Reformulation { lp, num_x: n, theta, y })
        }
        UncertaintySet::PolyhedralAffine { c, a, b, .. } => {
            let theta: Vec<usize> =
                b.iter().map(|&bi| lp.add_column(bi, 0.0, f64::INFINITY, &[])).collect();
            let k = u.num_generators();
            for r in 0..k {
                let mut row = vec![0.0; lp.num_vars()];
                for j in 0..n {
                    row[j] = -c[j][r];
                }
                for (i, &t) in theta.iter().enumerate() {
                    row[t] = a[i][r];
                }
                lp.add_row(row, RowSense::Ge, 0.0);
            }
            Ok(Reformulation { lp, num_x: n, theta, y: vec![None; n] })
        }
        other => Err(UncertaintyError::VariantMismatch { expected: "polyhedral", got: other.variant_name() }),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum UncertaintyDocument {
    Budget {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<Vec<f64>>,
        d: Vec<f64>,
        k: f64,
    },
    PolyDirect {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<Vec<f64>>,
        /// `null` stands for an infinite cap.
        d: Vec<Option<f64>>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    PolyAffine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<Vec<f64>>,
        #[serde(rename = "C")]
        c: Vec<Vec<f64>>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    EllipsoidDirect {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<Vec<f64>>,
        #[serde(rename = "D")]
        shape: Vec<Vec<f64>>,
    },
    EllipsoidAffine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<Vec<f64>>,
        #[serde(rename = "C")]
        c: Vec<Vec<f64>>,
        #[serde(rename = "D")]
        shape: Vec<Vec<f64>>,
        sign_constrained: bool,
    },
}

/// Parses an uncertainty document for an `n`-dimensional problem. A missing
/// `"c0"` defaults to `default_c0`.
pub fn parse_uncertainty(document: &str, default_c0: &[f64]) -> Result<UncertaintySet, UncertaintyError> {
    let doc: UncertaintyDocument =
        serde_json::from_str(document).map_err(|e| UncertaintyError::SchemaError(e.to_string()))?;
    let pick = |c0: Option<Vec<f64>>| c0.unwrap_or_else(|| default_c0.to_vec());
    let u = match doc {
        UncertaintyDocument::Budget { c0, d, k } => UncertaintySet::budget(pick(c0), d, k)?,
        UncertaintyDocument::PolyDirect { c0, d, a, b } => UncertaintySet::PolyhedralDirect {
            c0: pick(c0),
            d: d.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect(),
            a,
            b,
        },
        UncertaintyDocument::PolyAffine { c0, c, a, b } => UncertaintySet::PolyhedralAffine { c0: pick(c0), c, a, b },
        UncertaintyDocument::EllipsoidDirect { c0, shape } => UncertaintySet::ellipsoid_direct(pick(c0), shape)?,
        UncertaintyDocument::EllipsoidAffine { c0, c, shape, sign_constrained } => {
            UncertaintySet::ellipsoid_affine(pick(c0), c, shape, sign_constrained)?
        }
    };
    u.validate()?;
    if u.dim() != default_c0.len() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "set has dimension {}, instance has {} variables",
            u.dim(),
            default_c0.len()
        )));
    }
    Ok(u)
}

/// Serializes a set. Budget sets are written in their polyhedral form.
pub fn uncertainty_to_json(u: &UncertaintySet) -> String {
    let doc = match u.clone() {
        UncertaintySet::PolyhedralDirect { c0, d, a, b } => UncertaintyDocument::PolyDirect {
            c0: Some(c0),
            d: d.into_iter().map(|v| v.is_finite().then_some(v)).collect(),
            a,
            b,
        },
        UncertaintySet::PolyhedralAffine { c0, c, a, b } => UncertaintyDocument::PolyAffine { c0: Some(c0), c, a, b },
        UncertaintySet::EllipsoidDirect { c0, shape } => UncertaintyDocument::EllipsoidDirect { c0: Some(c0), shape },
        UncertaintySet::EllipsoidAffine { c0, c, shape, sign_constrained } => {
            UncertaintyDocument::EllipsoidAffine { c0: Some(c0), c, shape, sign_constrained }
        }
    };
    serde_json::to_string(&doc).expect("uncertainty serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn budget_normal_form() {
        let u = UncertaintySet::budget(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).unwrap();
        let (v, report) = normalize(&u).unwrap();
        assert!(report.is_empty());
        match v {
            UncertaintySet::PolyhedralDirect { a, b, .. } => {
                assert_eq!(a, vec![vec![1.0, 1.0]]);
                assert_eq!(b, vec![1.0]);
            }
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn normalization_scales_and_folds() {
        let u = UncertaintySet::PolyhedralDirect {
            c0: vec![1.0, 1.0],
            d: vec![f64::INFINITY, 3.0],
            a: vec![vec![2.0, 0.0]],
            b: vec![2.0],
        };
        let (v, report) = normalize(&u).unwrap();
        assert_eq!(report.folded, vec![(1, 3.0)]);
        match v {
            UncertaintySet::PolyhedralDirect { c0, d, a, b } => {
                assert_eq!(a, vec![vec![1.0, 0.0]]);
                assert_eq!(b, vec![1.0]);
                assert_eq!(c0, vec![1.0, 4.0]);
                assert_eq!(d[1], 0.0);
            }
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn zero_rhs_rows_pin_coordinates() {
        let u = UncertaintySet::PolyhedralDirect {
            c0: vec![1.0, 1.0, 1.0],
            d: vec![1.0, 1.0, 1.0],
            a: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]],
            b: vec![0.0, 2.0],
        };
        let (v, report) = normalize(&u).unwrap();
        assert_eq!(report.dropped_rows, vec![0]);
        assert_eq!(report.pinned_coordinates, vec![0]);
        assert_eq!(worst_case(&v, &[1.0, 1.0, 1.0]).unwrap().value, worst_case(&u, &[1.0, 1.0, 1.0]).unwrap().value);
    }

    #[test]
    fn unbounded_coordinate_rejected() {
        let u = UncertaintySet::PolyhedralDirect {
            c0: vec![1.0, 1.0],
            d: vec![1.0, f64::INFINITY],
            a: vec![vec![1.0, 0.0]],
            b: vec![1.0],
        };
        assert_eq!(normalize(&u).unwrap_err(), UncertaintyError::UnboundedUncertainty(1));
        let aff = UncertaintySet::PolyhedralAffine {
            c0: vec![1.0],
            c: vec![vec![1.0, 1.0]],
            a: vec![vec![1.0, 0.0]],
            b: vec![1.0],
        };
        assert_eq!(normalize(&aff).unwrap_err(), UncertaintyError::UnboundedUncertainty(1));
    }

    #[test]
    fn width_examples() {
        let u = UncertaintySet::budget(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).unwrap();
        let w = width_params(&u).unwrap();
        assert_eq!((w.beta, w.gamma), (Some(1.0), Some(1.0)));

        let u = UncertaintySet::PolyhedralDirect {
            c0: vec![1.0, 1.0],
            d: vec![f64::INFINITY; 2],
            a: vec![vec![1.0, 2.0], vec![3.0, 1.0]],
            b: vec![1.0, 1.0],
        };
        let w = width_params(&u).unwrap();
        assert_eq!((w.beta, w.gamma), (Some(2.0), Some(3.0)));

        let e = UncertaintySet::ellipsoid_direct(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let w = width_params(&e).unwrap();
        assert_abs_diff_eq!(w.lambda_min.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.lambda_max.unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn worst_case_examples() {
        let u = UncertaintySet::budget(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).unwrap();
        let w = worst_case(&u, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w.value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dot(&w.witness_c, &[1.0, 1.0]), 3.0, epsilon = 1e-12);
        assert_eq!(worst_case(&u, &[0.0, 0.0]).unwrap().value, 0.0);

        let e = UncertaintySet::ellipsoid_affine(
            vec![1.0, 1.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            false,
        )
        .unwrap();
        let w = worst_case(&e, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w.value, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(dot(&w.witness_c, &[1.0, 1.0]), 2.0 + 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(worst_case(&e, &[0.0, 0.0]).unwrap().witness_perturbation, vec![0.0, 0.0]);
    }

    #[test]
    fn sign_constraint_binds_for_negative_correlation() {
        // D² has a negative off-diagonal, so the free maximizer leaves the orthant.
        let shape = vec![vec![1.0, -0.9], vec![-0.9, 1.0]];
        let e = UncertaintySet::ellipsoid_affine(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            shape.clone(),
            true,
        )
        .unwrap();
        let w = worst_case(&e, &[1.0, 0.1]).unwrap();
        assert!(w.witness_perturbation.iter().all(|&v| v >= 0.0));
        // Brute force over the nonnegative boundary arc.
        let geo = EllipsoidGeometry::new(&shape).unwrap();
        let mut best = 0.0f64;
        for t in 0..=200_000 {
            let th = std::f64::consts::FRAC_PI_2 * t as f64 / 200_000.0;
            let p = DVector::from_vec(vec![th.cos(), th.sin()]);
            let q = &p / geo.norm(&p);
            best = best.max(q[0] + 0.1 * q[1]);
        }
        assert!((w.value - best).abs() < 1e-6, "{} vs {}", w.value, best);
        let kelley_only = WorstCaseOptions { polish: false, ..Default::default() };
        let raw = worst_case_with(&e, &[1.0, 0.1], &kelley_only).unwrap();
        assert!(raw.value <= w.value + 1e-12 && raw.value > w.value - 1e-3);
    }

    #[test]
    fn cutting_plane_matches_closed_form_without_sign() {
        let shape = vec![vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 0.7]];
        let c = vec![vec![1.0, 0.0], vec![0.5, 1.0], vec![0.0, 2.0]];
        let shape2 = vec![vec![1.0, 0.3], vec![0.3, 0.5]];
        let e = UncertaintySet::ellipsoid_affine(vec![1.0; 3], c, shape2, false).unwrap();
        let opts = WorstCaseOptions { cutting_plane_free_sign: true, closed_form_shortcut: false, ..Default::default() };
        let x = [0.3, 1.0, 0.6];
        let a = worst_case(&e, &x).unwrap().value;
        let b = worst_case_with(&e, &x, &opts).unwrap().value;
        assert!((a - b).abs() < 1e-9);
        let ed = UncertaintySet::ellipsoid_direct(vec![1.0; 3], shape).unwrap();
        let v = worst_case_with(&ed, &x, &WorstCaseOptions { closed_form_shortcut: false, ..Default::default() });
        let v2 = worst_case(&ed, &x).unwrap();
        assert!((v.unwrap().value - v2.value).abs() < 1e-9);
    }

    #[test]
    fn reformulation_adds_dual_block() {
        let u = UncertaintySet::budget(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).unwrap();
        let mut base = LpProblem::minimize(vec![0.0, 0.0]);
        base.add_row(vec![1.0, 0.0], RowSense::Ge, 1.0);
        base.add_row(vec![0.0, 1.0], RowSense::Ge, 1.0);
        base.set_bounds(0, 0.0, 1.0);
        base.set_bounds(1, 0.0, 1.0);
        let r = dual_reformulation(&u, &base).unwrap();
        assert_eq!(r.lp.num_vars(), 5);
        let s = solve_lp(&r.lp, &SolverTolerances::default()).unwrap();
        assert_abs_diff_eq!(s.objective, 3.0, epsilon = 1e-9);
        let e = UncertaintySet::ellipsoid_direct(vec![1.0], vec![vec![1.0]]).unwrap();
        assert!(matches!(dual_reformulation(&e, &base), Err(UncertaintyError::VariantMismatch { .. })));
    }

    #[test]
    fn json_documents() {
        let u = parse_uncertainty(r#"{"type":"budget","d":[1,1],"k":1}"#, &[1.0, 2.0]).unwrap();
        assert_eq!(u.c0(), &[1.0, 2.0]);
        let back = parse_uncertainty(&uncertainty_to_json(&u), &[9.0, 9.0]).unwrap();
        assert_eq!(back, u);
        let pd = parse_uncertainty(r#"{"type":"poly_direct","d":[null,2],"A":[[1,1]],"b":[1]}"#, &[1.0, 1.0]).unwrap();
        match &pd {
            UncertaintySet::PolyhedralDirect { d, .. } => assert!(d[0].is_infinite()),
            _ => panic!(),
        }
        assert_eq!(parse_uncertainty(&uncertainty_to_json(&pd), &[1.0, 1.0]).unwrap(), pd);
        let asym = parse_uncertainty(r#"{"type":"ellipsoid_direct","D":[[2,1],[0,2]]}"#, &[1.0, 1.0]).unwrap();
        match asym {
            UncertaintySet::EllipsoidDirect { shape, .. } => assert_eq!(shape[0][1], 0.5),
            _ => panic!(),
        }
        assert!(matches!(parse_uncertainty(r#"{"type":"nope"}"#, &[1.0]), Err(UncertaintyError::SchemaError(_))));
        assert!(matches!(
            parse_uncertainty(r#"{"type":"budget","d":[1],"k":1}"#, &[1.0, 1.0]),
            Err(UncertaintyError::DimensionMismatch(_))
        ));
        assert!(matches!(
            parse_uncertainty(r#"{"type":"ellipsoid_direct","D":[[1,0],[0,-1]]}"#, &[1.0, 1.0]),
            Err(UncertaintyError::NotPositiveDefinite)
        ));
    }
}
