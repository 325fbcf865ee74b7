//! Small dense symmetric-matrix helpers on top of `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as zero when taking square roots.
pub const SQRT_CLIP: f64 = 1e-12;

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::DimensionMismatch {
            what: "matrix row".into(),
            expected: c,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Fails with [`Error::NotSymmetric`] on the first entry pair further apart than `tol`.
pub fn check_symmetric(what: &str, a: &DMatrix<f64>, tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: format!("{what} (square)"),
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            if !(gap <= tol) {
                return Err(Error::NotSymmetric {
                    what: what.to_string(),
                    i,
                    j,
                    gap,
                });
            }
        }
    }
    Ok(())
}

fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    symmetrized(a).symmetric_eigenvalues().min()
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    symmetrized(a).symmetric_eigenvalues().amax()
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues below [`SQRT_CLIP`] are set to zero, so rank-deficient input
/// needs no special handling.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        return DMatrix::from_element(1, 1, if v < SQRT_CLIP { 0.0 } else { v.sqrt() });
    }
    let eig = symmetrized(a).symmetric_eigen();
    let roots = eig
        .eigenvalues
        .map(|l| if l < SQRT_CLIP { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr[A B]` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_rank_one_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = psd_sqrt(&a);
        let back = &r * &r;
        assert!((back - &a).amax() < 1e-12);
        assert!((r[(0, 0)] - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sqrt_clips_tiny_negative_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let r = psd_sqrt(&a);
        assert_eq!(r[(1, 1)], 0.0);
        assert!((r[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_and_min_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((spectral_norm(&a) - 3.0).abs() < 1e-12);
        assert!((min_eigenvalue(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetry_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            check_symmetric("A", &a, 1e-12),
            Err(Error::NotSymmetric { i: 0, j: 1, .. })
        ));
    }
}
