//! Thin wrappers over nalgebra for the small dense solves used by the fitters.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance below which a pivot is treated as zero.
const RANK_TOL: f64 = 1e-11;

/// Least squares via Householder QR. `None` if `a` is numerically rank deficient.
pub fn lstsq(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let p = a.ncols();
    if a.nrows() < p {
        return None;
    }
    let col_norm = (0..p).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let qr = a.qr();
    let r = qr.r();
    if (0..p).any(|i| r[(i, i)].abs() <= RANK_TOL * col_norm.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
}

/// Inverse of a symmetric positive definite matrix; `None` when the Cholesky
/// factorization fails or a pivot collapses.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let chol = m.clone().cholesky()?;
    let l = chol.l();
    for i in 0..n {
        if l[(i, i)] * l[(i, i)] <= RANK_TOL * RANK_TOL * m[(i, i)].abs() {
            return None;
        }
    }
    Some(chol.inverse())
}

/// Solve the square system `a x = b`; `None` when `a` is singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax();
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    if (0..a.nrows()).any(|i| u[(i, i)].abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    lu.solve(b)
}
