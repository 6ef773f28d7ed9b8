//! Symmetric factorization for correlated Gaussian draws.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

/// L with L·Lᵀ = `a`, from the eigendecomposition with tiny negative
/// eigenvalues (> −1e-10) clipped to zero.
pub fn psd_factor(a: &Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::input("matrix is not square"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::input(format!("matrix is not positive semi-definite (eigenvalue {min:e})")));
    }
    Ok(Array2::from_shape_fn((d, d), |(i, j)| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    let d = a.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}
