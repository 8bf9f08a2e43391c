use nalgebra::DMatrix;

use crate::error::{PvarError, Result};

/// Inverse of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let scale = a.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(PvarError::SingularDesign(format!("{what} is zero")));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| PvarError::SingularDesign(format!("{what} is not positive definite")))?;
    // reject numerically rank-deficient cross products
    let min_pivot = chol.l().diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
    if min_pivot * min_pivot < 1e-13 * scale {
        return Err(PvarError::SingularDesign(format!("{what} is rank deficient")));
    }
    Ok(chol.inverse())
}

/// Least squares `Y = X B`; returns `B` and `(X'X)^{-1}`.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let xtx = x.transpose() * x;
    let inv = spd_inverse(&xtx, "regressor cross-product")?;
    let b = &inv * (x.transpose() * y);
    Ok((b, inv))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

pub(crate) fn demeaned(a: &[f64]) -> Vec<f64> {
    let mu = mean(a);
    a.iter().map(|v| v - mu).collect()
}

pub(crate) fn rows_to_vec(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PvarError::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

