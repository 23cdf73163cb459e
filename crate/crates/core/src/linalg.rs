//! Small symmetric-matrix helpers on top of nalgebra.
//!
//! Matrix square roots and inverses go through the symmetric
//! eigendecomposition. Eigenvalues are clamped at `EIG_CLAMP`; if a clamped
//! value exceeds `CLAMP_REL_LIMIT` times the spectral norm the matrix is
//! rejected rather than silently repaired.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};

/// Absolute floor applied to eigenvalues before forming functions of them.
pub const EIG_CLAMP: f64 = 1e-14;

/// A clamped eigenvalue larger than this fraction of the spectral norm means
/// the input was genuinely singular, not just noisy.
pub const CLAMP_REL_LIMIT: f64 = 1e-10;

/// Maximum allowed asymmetry |A - A^T| entry for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Checks symmetry within `SYMMETRY_TOL` and returns the symmetrized matrix.
pub fn symmetrize_checked(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(LabError::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let mut max_asym = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            max_asym = max_asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL {
        return Err(LabError::InvalidMeasure(format!(
            "covariance asymmetry {max_asym:.3e} exceeds {SYMMETRY_TOL:.0e}"
        )));
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Eigendecomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`
/// with `A = Q diag(lambda) Q^T`.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = a.clone().symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Requires all eigenvalues strictly positive; returns them with the basis.
pub fn spd_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (vals, vecs) = sym_eigen(a);
    if vals.iter().any(|&l| l <= 0.0) {
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(LabError::InvalidMeasure(format!(
            "matrix not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    Ok((vals, vecs))
}

/// Applies `f` to the spectrum of a symmetric positive-semidefinite matrix.
///
/// Eigenvalues are floored at `EIG_CLAMP` to absorb roundoff from matrix
/// products; an eigenvalue more than `CLAMP_REL_LIMIT` of the spectral norm
/// below zero means the input is genuinely indefinite and is rejected.
pub fn sym_matrix_function(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(a);
    let spectral = vals.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut mapped = DVector::zeros(vals.len());
    for (i, &l) in vals.iter().enumerate() {
        if l < -CLAMP_REL_LIMIT * spectral.max(1.0) {
            return Err(LabError::InvalidMeasure(format!(
                "eigenvalue {l:.3e} genuinely negative relative to spectral norm {spectral:.3e}"
            )));
        }
        mapped[i] = f(l.max(EIG_CLAMP));
    }
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= mapped[j];
    }
    Ok(&scaled * vecs.transpose())
}

/// Symmetric PSD square root (tolerates roundoff-scale negative
/// eigenvalues).
pub fn spd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_matrix_function(a, f64::sqrt)
}

/// Inverse through the spectrum; requires strict positive definiteness.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_eigen(a)?;
    sym_matrix_function(a, |l| 1.0 / l)
}

/// log det of an SPD matrix.
pub fn spd_log_det(a: &DMatrix<f64>) -> Result<f64> {
    let (vals, _) = spd_eigen(a)?;
    Ok(vals.iter().map(|&l| l.ln()).sum())
}

/// Condition number estimate of a symmetric positive semidefinite matrix.
pub fn sym_condition(a: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(a);
    let max = vals.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let min = vals.iter().fold(f64::INFINITY, |m, &l| m.min(l.abs()));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves the SPD system `(A + ridge I) x = b` by Cholesky, for several
/// right-hand sides stored as columns.
pub fn solve_spd(a: &DMatrix<f64>, ridge: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let damped = a + DMatrix::identity(n, n) * ridge;
    let chol = damped
        .cholesky()
        .ok_or_else(|| LabError::InvalidParameter("normal equations not SPD".into()))?;
    Ok(chol.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = spd_sqrt(&a).unwrap();
        let back = &s * &s;
        assert!((back - &a).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(symmetrize_checked(&a).is_err());
    }

    #[test]
    fn rejects_singular_inverse_but_allows_psd_sqrt() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_eigen(&a).is_err());
        assert!(spd_inverse(&a).is_err());
        // The square root of an exactly PSD matrix is fine.
        let s = spd_sqrt(&a).unwrap();
        assert!(((&s * &s) - &a).abs().max() < 1e-6);
    }

    #[test]
    fn rejects_indefinite_sqrt() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(spd_sqrt(&a).is_err());
    }

    #[test]
    fn log_det_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]);
        assert!((spd_log_det(&a).unwrap() - 0.0).abs() < 1e-14);
    }
}
