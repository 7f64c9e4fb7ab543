//! Small dense linear-algebra helpers shared by the estimators and oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Reciprocal condition number below which a block inverse is refused.
pub const BLOCK_RCOND_MIN: f64 = 1e-12;
/// Reciprocal condition number below which `Id - B` and the cross-proxy
/// moment `E[ZW^T]` are rejected.
pub const STRUCTURAL_RCOND_MIN: f64 = 1e-10;
/// Below this the final normal-equation solve switches to a pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-12;
/// Below this the normal-equation matrix is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-14;

/// Ratio of smallest to largest singular value; `0` for the zero matrix.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute difference between `m[(i, j)]` and `m[(j, i)]`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.max()
}

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(
            what,
            format!("square matrix"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn ensure_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dim(
            what,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn ensure_len(v: &DVector<f64>, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(what, len, v.len()));
    }
    Ok(())
}

/// Inverse of a square matrix that must be comfortably invertible.
pub fn inverse_checked(m: &DMatrix<f64>, what: &str, min_rcond: f64) -> Result<DMatrix<f64>> {
    ensure_square(m, what)?;
    let rc = rcond(m);
    if !(rc >= min_rcond) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    m.clone().try_inverse().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        rcond: rc,
    })
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    let eps = max * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Solve `a x = b` for a symmetric `a`.
///
/// Uses a Cholesky factorization when `a` is positive definite and LU
/// otherwise. When the reciprocal condition number drops below
/// [`PINV_RCOND`] the pseudo-inverse is used and a warning is logged.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    ensure_square(a, what)?;
    ensure_len(b, a.nrows(), what)?;
    let rc = rcond(a);
    if !(rc >= SINGULAR_RCOND) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    if rc < PINV_RCOND {
        log::warn!("{what}: reciprocal condition number {rc:.3e}; falling back to pseudo-inverse");
        return Ok(pinv(a) * b);
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        rcond: rc,
    })
}

/// Factor `L` with `L L^T = s` for a symmetric PSD `s` (negative eigenvalues
/// from rounding are clamped to zero).
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    if s.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    if let Some(chol) = s.clone().cholesky() {
        return chol.l();
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

pub fn quad_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

pub fn bilinear(u: &DVector<f64>, m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (u.transpose() * m * v)[(0, 0)]
}

/// Build a matrix from row-major nested vectors.
pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::dim(format!("{what} (ragged rows)"), ncols, bad.len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rcond_of_identity_and_singular() {
        assert_eq!(rcond(&DMatrix::identity(3, 3)), 1.0);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(rcond(&s) < 1e-15);
    }

    #[test]
    fn psd_factor_reproduces_semidefinite_matrix() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&s);
        assert!(max_abs_diff(&(&l * l.transpose()), &s) < 1e-12);
    }

    #[test]
    fn solve_symmetric_handles_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let x = solve_symmetric(&a, &DVector::from_vec(vec![1.0, 4.0]), "a").unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]], "m").is_err());
    }
}
