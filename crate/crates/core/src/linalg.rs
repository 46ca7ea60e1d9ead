//! Small dense linear-algebra helpers shared by the filter and validators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue together with its unit eigenvector.
pub fn min_eigenpair(m: &Matrix) -> (f64, Vector) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let (idx, value) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    (value, eig.eigenvectors.column(idx).into_owned())
}

/// `true` when `b - a` is positive semidefinite up to `tol`.
pub fn loewner_le(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    min_eigenvalue(&(b - a)) >= -tol
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    m.clone()
        .cholesky()
        .map(|c| symmetrize(&c.inverse()))
        .ok_or_else(|| Error::NotPositiveDefinite { what: what.to_string() })
}

/// Checks positive definiteness by attempting a Cholesky factorization.
pub fn ensure_pd(m: &Matrix, what: &str) -> Result<()> {
    if m.clone().cholesky().is_some() && min_eigenvalue(m) > 0.0 {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { what: what.to_string() })
    }
}

pub fn ensure_psd(m: &Matrix, what: &str, tol: f64) -> Result<()> {
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotSymmetric { what: what.to_string() });
    }
    if min_eigenvalue(m) < -tol * m.amax().max(1.0) {
        return Err(Error::NotPositiveSemidefinite { what: what.to_string() });
    }
    Ok(())
}

/// Symmetric square root `S` with `S Sᵀ = m` for a PSD matrix; negative
/// eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Matrix> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(crate::error::dim_err(what, (rows.len(), ncols), (rows.len(), bad.len())));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_reproduces_psd_matrix() {
        let m = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = psd_sqrt(&m);
        assert!((&s * s.transpose() - &m).amax() < 1e-12);
        let singular = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&singular);
        assert!((&s * s.transpose() - &singular).amax() < 1e-12);
    }

    #[test]
    fn loewner_order() {
        let a = Matrix::identity(2, 2);
        let b = Matrix::identity(2, 2) * 2.0;
        assert!(loewner_le(&a, &b, 0.0));
        assert!(!loewner_le(&b, &a, 0.0));
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_inverse(&m, "m").is_err());
    }
}
