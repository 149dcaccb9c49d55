//! Small dense symmetric-matrix helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::Error;

/// Relative eigenvalue cutoff below which a symmetric matrix is treated as
/// singular. Below-cutoff inversions fail loudly instead of silently
/// pseudo-inverting.
pub const EIG_CUTOFF: f64 = 1e-12;

/// Maximum condition number accepted by [`sym_inverse`].
pub const MAX_CONDITION: f64 = 1e12;

/// Symmetrizes in place: `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Max relative asymmetry `|m - m'| / max|m|` (0 for an exactly symmetric
/// matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Inverse of a symmetric positive-definite matrix via eigendecomposition.
///
/// Returns the inverse and the condition estimate `|λ|_max / |λ|_min`.
/// Fails when the smallest eigenvalue is nonpositive or below
/// [`EIG_CUTOFF`] relative to the largest, or the condition exceeds
/// [`MAX_CONDITION`].
pub fn sym_inverse(
    m: &DMatrix<f64>,
    context: &'static str,
) -> Result<(DMatrix<f64>, f64), Error> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    let cond = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    if !(min > 0.0) || max_abs == 0.0 || min < EIG_CUTOFF * max_abs || cond > MAX_CONDITION {
        return Err(Error::Singular { context, cond });
    }
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let q = eig.eigenvectors.column(k);
        let w = 1.0 / eig.eigenvalues[k];
        // inv += w * q q'
        for i in 0..n {
            for j in 0..n {
                inv[(i, j)] += w * q[i] * q[j];
            }
        }
    }
    symmetrize(&mut inv);
    Ok((inv, cond))
}

/// Inverse of a symmetric (possibly indefinite) matrix via
/// eigendecomposition, with the same relative cutoff and condition cap as
/// [`sym_inverse`] but applied to eigenvalue magnitudes.
pub fn sym_inverse_indefinite(
    m: &DMatrix<f64>,
    context: &'static str,
) -> Result<(DMatrix<f64>, f64), Error> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.amax();
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    let cond = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    if max_abs == 0.0 || min_abs < EIG_CUTOFF * max_abs || cond > MAX_CONDITION {
        return Err(Error::Singular { context, cond });
    }
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let q = eig.eigenvectors.column(k);
        let w = 1.0 / eig.eigenvalues[k];
        for i in 0..n {
            for j in 0..n {
                inv[(i, j)] += w * q[i] * q[j];
            }
        }
    }
    symmetrize(&mut inv);
    Ok((inv, cond))
}

/// Solves `h x = rhs` for symmetric `h`, adding a diagonal ridge until the
/// factorization is positive definite. Returns the solution and the ridge
/// actually used.
pub fn ridge_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = h.nrows();
    let scale = h.amax().max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut m = h.clone();
        if ridge > 0.0 {
            for i in 0..n {
                m[(i, i)] += ridge;
            }
        }
        if let Some(chol) = m.cholesky() {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return (x, ridge);
            }
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
        if ridge > 1e8 * scale {
            // Give up on curvature; fall back to (scaled) steepest descent.
            return (rhs / scale, ridge);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (inv, cond) = sym_inverse(&m, "test").unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(cond > 1.0 && cond < 10.0);
    }

    #[test]
    fn singular_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            sym_inverse(&m, "test"),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn indefinite_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(sym_inverse(&m, "test").is_err());
    }

    #[test]
    fn ridge_solve_recovers_newton_step() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let rhs = DVector::from_row_slice(&[1.0, 2.0]);
        let (x, ridge) = ridge_solve(&h, &rhs);
        assert_eq!(ridge, 0.0);
        assert!((&h * &x - &rhs).amax() < 1e-12);
    }
}
