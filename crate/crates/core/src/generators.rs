//! Seeded random uncertainty sets with the structural properties each
//! algorithm requires.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::uncertainty::UncertaintySet;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// `diag(r) + s·11ᵀ` with `r ∈ [1, spread]`, `s ∈ [0, 1/2]`: symmetric
/// positive definite with positive entries.
fn positive_spd(rng: &mut ChaCha8Rng, dim: usize, spread: f64) -> DMatrix<f64> {
    let s = rng.gen_range(0.0..=0.5);
    let mut m = DMatrix::from_element(dim, dim, s);
    for i in 0..dim {
        m[(i, i)] += if spread > 1.0 { rng.gen_range(1.0..=spread) } else { 1.0 };
    }
    m
}

/// Budget set with deviations `d_j ∈ [0, width·c0_j]`, each active with
/// probability `active`, and budget `k`.
pub fn random_budget(rng: &mut ChaCha8Rng, c0: &[f64], width: f64, active: f64, k: f64) -> UncertaintySet {
    let d = c0
        .iter()
        .map(|&c| if rng.gen_bool(active) { rng.gen_range(0.1..=1.0) * width * c.max(0.1) } else { 0.0 })
        .collect();
    UncertaintySet::budget(c0.to_vec(), d, k).expect("generated budget set is valid")
}

/// Direct polyhedral set with `m_a` rows of entries in `[0, 1]`, caps in
/// `(0, width]` and right-hand sides in `[1, 2]`.
pub fn random_poly_direct(rng: &mut ChaCha8Rng, c0: &[f64], m_a: usize, width: f64) -> UncertaintySet {
    let n = c0.len();
    let d = (0..n).map(|_| rng.gen_range(0.1..=1.0) * width).collect();
    let a: Vec<Vec<f64>> = (0..m_a).map(|_| (0..n).map(|_| rng.gen_range(0.05..=1.0)).collect()).collect();
    let b = (0..m_a).map(|_| rng.gen_range(1.0..=2.0)).collect();
    let u = UncertaintySet::PolyhedralDirect { c0: c0.to_vec(), d, a, b };
    u.validate().expect("generated polyhedral set is valid");
    u
}

/// Affine polyhedral set with `k` generators of density one half (each
/// with at least one positive entry), entries in `[0, width]`, and `m_a`
/// positive rows.
pub fn random_poly_affine(rng: &mut ChaCha8Rng, c0: &[f64], k: usize, m_a: usize, width: f64) -> UncertaintySet {
    let n = c0.len();
    let mut c = vec![vec![0.0; k]; n];
    for r in 0..k {
        for row in c.iter_mut() {
            if rng.gen_bool(0.5) {
                row[r] = rng.gen_range(0.2..=1.0) * width;
            }
        }
        if c.iter().all(|row| row[r] == 0.0) {
            c[rng.gen_range(0..n)][r] = width;
        }
    }
    let a: Vec<Vec<f64>> = (0..m_a).map(|_| (0..k).map(|_| rng.gen_range(0.2..=1.0)).collect()).collect();
    let b = (0..m_a).map(|_| rng.gen_range(1.0..=2.0)).collect();
    let u = UncertaintySet::PolyhedralAffine { c0: c0.to_vec(), c, a, b };
    u.validate().expect("generated affine set is valid");
    u
}

/// Direct ellipsoid `D = width·M⁻¹` where `M` is positive SPD, so `D⁻¹ > 0`.
pub fn random_ellipsoid_direct(rng: &mut ChaCha8Rng, c0: &[f64], width: f64, spread: f64) -> UncertaintySet {
    let n = c0.len();
    let m = positive_spd(rng, n, spread);
    let d = m.try_inverse().expect("positive definite") * width;
    UncertaintySet::ellipsoid_direct(c0.to_vec(), rows(&d)).expect("generated ellipsoid is valid")
}

/// Affine ellipsoid with `k` nonnegative generators.
///
/// Sign-constrained sets get `D = width·M⁻¹` with `M` positive SPD
/// (`D⁻¹ > 0`). Free-sign sets get `D = width·M` directly, so `DCᵀ ≥ 0`.
pub fn random_ellipsoid_affine(
    rng: &mut ChaCha8Rng,
    c0: &[f64],
    k: usize,
    width: f64,
    spread: f64,
    sign_constrained: bool,
) -> UncertaintySet {
    let n = c0.len();
    let mut c = vec![vec![0.0; k]; n];
    for r in 0..k {
        for row in c.iter_mut() {
            if rng.gen_bool(0.5) {
                row[r] = rng.gen_range(0.2..=1.0);
            }
        }
        if c.iter().all(|row| row[r] == 0.0) {
            c[rng.gen_range(0..n)][r] = 1.0;
        }
    }
    let m = positive_spd(rng, k, spread);
    let d = if sign_constrained { m.try_inverse().expect("positive definite") * width } else { m * width };
    UncertaintySet::ellipsoid_affine(c0.to_vec(), c, rows(&d), sign_constrained).expect("generated ellipsoid is valid")
}
