use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest eigenvalue, relative to the largest, accepted as non-singular.
const RCOND_FLOOR: f64 = 1e-12;

/// Inverse of a symmetric positive definite matrix; near-singular input is
/// rejected rather than inverted.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_cholesky(m)?.inverse()))
}

/// Cholesky factor of a well-conditioned symmetric positive definite matrix.
pub fn spd_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInformation);
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= RCOND_FLOOR * max {
        return Err(Error::SingularInformation);
    }
    sym.cholesky().ok_or(Error::SingularInformation)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
