//! The stabilized soft-minimum and its row/column reductions over the residual
//! matrix `R(f, g) = C − f 1ᵀ − 1 gᵀ`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Hard minimum of a nonempty iterator; the first minimizer wins ties.
#[inline]
fn hard_min(z: impl Iterator<Item = f64>) -> f64 {
    z.fold(f64::INFINITY, |m, x| if x < m { x } else { m })
}

#[inline]
fn soft_min_iter<I>(z: I, epsilon: f64) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = hard_min(z.clone());
    let s: f64 = z.map(|x| libm::exp(-(x - m) / epsilon)).sum();
    m - epsilon * libm::log(s)
}

/// `min_ε z = min z − ε log Σ exp(−(z_i − min z)/ε)`.
pub fn soft_min(z: &[f64], epsilon: f64) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(soft_min_iter(z.iter().copied(), epsilon))
}

/// Gradient of [`soft_min`]: the Gibbs weights `exp(−(z − min z)/ε)` normalized to sum 1.
pub fn soft_min_grad(z: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::EmptyVector);
    }
    let m = hard_min(z.iter().copied());
    let mut w: Vec<f64> = z.iter().map(|&x| libm::exp(-(x - m) / epsilon)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// `R_ij = C_ij − f_i − g_j`.
pub fn residual_matrix(f: &[f64], g: &[f64], cost: &Matrix) -> Result<Matrix> {
    if f.len() != cost.rows() || g.len() != cost.cols() {
        return Err(Error::DimensionMismatch {
            expected: cost.shape(),
            found: (f.len(), g.len()),
        });
    }
    Ok(residual(f, g, cost))
}

pub(crate) fn residual(f: &[f64], g: &[f64], cost: &Matrix) -> Matrix {
    Matrix::from_fn(cost.rows(), cost.cols(), |i, j| {
        cost.get(i, j) - f[i] - g[j]
    })
}

/// Soft-minimum of every row.
pub fn min_row(r: &Matrix, epsilon: f64) -> Result<Vec<f64>> {
    if r.rows() == 0 || r.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(min_row_unchecked(r, epsilon))
}

/// Soft-minimum of every column.
pub fn min_col(r: &Matrix, epsilon: f64) -> Result<Vec<f64>> {
    if r.rows() == 0 || r.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(min_col_unchecked(r, epsilon))
}

pub(crate) fn min_row_unchecked(r: &Matrix, epsilon: f64) -> Vec<f64> {
    (0..r.rows())
        .map(|i| soft_min_iter(r.row(i).iter().copied(), epsilon))
        .collect()
}

pub(crate) fn min_col_unchecked(r: &Matrix, epsilon: f64) -> Vec<f64> {
    (0..r.cols())
        .map(|j| soft_min_iter((0..r.rows()).map(|i| r.get(i, j)), epsilon))
        .collect()
}

/// Stacks [`soft_min_grad`] of every column of `r`; the result is column-stochastic.
pub fn column_softmin_weights(r: &Matrix, epsilon: f64) -> Matrix {
    let mut out = Matrix::zeros(r.rows(), r.cols());
    for j in 0..r.cols() {
        let col = r.column(j);
        // non-empty by construction
        let w = soft_min_grad(&col, epsilon).unwrap_or_default();
        out.set_column(j, &w);
    }
    out
}

/// Stacks [`soft_min_grad`] of every row of `r`; the result is row-stochastic.
pub fn row_softmin_weights(r: &Matrix, epsilon: f64) -> Matrix {
    let mut data = Vec::with_capacity(r.rows() * r.cols());
    for i in 0..r.rows() {
        data.extend(soft_min_grad(r.row(i), epsilon).unwrap_or_default());
    }
    Matrix::new(r.rows(), r.cols(), data).expect("shape preserved")
}
