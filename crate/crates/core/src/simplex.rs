//! Probability vectors, their validation, and the softmax map onto the simplex.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Absolute deviation of the total mass from 1 that validation accepts.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Floor applied to histogram entries when clamping for log-domain solvers.
pub const CLAMP_FLOOR: f64 = 1e-16;

/// A nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram(Vec<f64>);

impl Histogram {
    /// Validates `values` as-is: no rescaling, zeros allowed.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_histogram(values, ValidateOptions::default())
    }

    pub fn uniform(n: usize) -> Self {
        Histogram(alloc::vec![1.0 / n as f64; n])
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&x| x > 0.0)
    }

    pub(crate) fn require_positive(&self) -> Result<()> {
        match self.0.iter().position(|&x| x <= 0.0) {
            Some(index) => Err(Error::NonPositiveHistogram { index }),
            None => Ok(()),
        }
    }
}

impl AsRef<[f64]> for Histogram {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Knobs for [`validate_histogram`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Rescale by the total mass instead of rejecting an unnormalized vector.
    pub renormalize: bool,
    /// Require every entry to be usable in `log` (log-domain solvers).
    pub strict_positive: bool,
    /// With `strict_positive`, lift entries below [`CLAMP_FLOOR`] and renormalize.
    pub clamp: bool,
}

impl ValidateOptions {
    pub fn log_domain(clamp: bool) -> Self {
        Self {
            renormalize: false,
            strict_positive: true,
            clamp,
        }
    }
}

pub fn validate_histogram(mut values: Vec<f64>, opts: ValidateOptions) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyVector);
    }
    for (index, &x) in values.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteEntry { index });
        }
        if x < 0.0 {
            return Err(Error::NegativeEntry { index, value: x });
        }
    }

    let sum: f64 = values.iter().sum();
    if libm::fabs(sum - 1.0) > MASS_TOLERANCE && (!opts.renormalize || sum <= 0.0) {
        return Err(Error::NotNormalized { sum });
    }
    if sum != 1.0 {
        values.iter_mut().for_each(|x| *x /= sum);
    }

    if opts.strict_positive {
        if let Some(index) = values.iter().position(|&x| x < CLAMP_FLOOR) {
            if !opts.clamp {
                return Err(Error::ZeroEntryInLogMode { index });
            }
            values.iter_mut().for_each(|x| *x = x.max(CLAMP_FLOOR));
            let sum: f64 = values.iter().sum();
            values.iter_mut().for_each(|x| *x /= sum);
        }
    }
    Ok(Histogram(values))
}

/// A matrix whose columns are histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBatch(Matrix);

impl HistogramBatch {
    /// Validates every column of `columns` with `opts`.
    pub fn new(columns: Matrix, opts: ValidateOptions) -> Result<Self> {
        if columns.rows() == 0 || columns.cols() == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut out = columns;
        for j in 0..out.cols() {
            let h = validate_histogram(out.column(j), opts)?;
            out.set_column(j, h.values());
        }
        Ok(HistogramBatch(out))
    }

    pub fn from_histograms(hs: &[Histogram]) -> Result<Self> {
        if hs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(HistogramBatch(Matrix::from_columns(hs)?))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Length of each histogram.
    #[inline]
    pub fn bins(&self) -> usize {
        self.0.rows()
    }

    /// Number of histograms.
    #[inline]
    pub fn count(&self) -> usize {
        self.0.cols()
    }

    pub fn histogram(&self, j: usize) -> Histogram {
        Histogram(self.0.column(j))
    }

    pub(crate) fn require_positive(&self) -> Result<()> {
        match self.0.as_slice().iter().position(|&x| x <= 0.0) {
            Some(flat) => Err(Error::NonPositiveHistogram {
                index: flat / self.0.cols(),
            }),
            None => Ok(()),
        }
    }
}

/// Max-shifted softmax.
pub fn softmax_vec(x: &[f64]) -> Result<Histogram> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(Histogram(softmax_raw(x)))
}

fn softmax_raw(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&xi| libm::exp(xi - max)).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|e| *e /= total);
    out
}

/// Dense Jacobian `diag(s) − s sᵀ` of the softmax at `x`.
pub fn softmax_jacobian_vec(x: &[f64]) -> Result<Matrix> {
    let s = softmax_vec(x)?;
    let s = s.values();
    Ok(Matrix::from_fn(s.len(), s.len(), |i, j| {
        let diag = if i == j { s[i] } else { 0.0 };
        diag - s[i] * s[j]
    }))
}

/// `Jᵀ · cotangent` for the softmax with output `s`, i.e. `s ⊙ c − s (sᵀ c)`.
///
/// The Jacobian is symmetric, so this is also the forward product.
pub fn softmax_pullback(s: &[f64], cotangent: &[f64]) -> Vec<f64> {
    let inner = dot(s, cotangent);
    s.iter()
        .zip(cotangent)
        .map(|(&si, &ci)| si * (ci - inner))
        .collect()
}

/// Column-wise softmax of an `n × s` matrix.
pub fn softmax_mat(x: &Matrix) -> Result<HistogramBatch> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for j in 0..x.cols() {
        out.set_column(j, &softmax_raw(&x.column(j)));
    }
    Ok(HistogramBatch(out))
}

/// Applies the block-diagonal Jacobian of [`softmax_mat`] column by column.
///
/// `images` holds the softmax outputs, `cotangent` the upstream gradient w.r.t. them.
pub fn softmax_mat_pullback(images: &Matrix, cotangent: &Matrix) -> Result<Matrix> {
    cotangent.check_shape(images.rows(), images.cols())?;
    let mut out = Matrix::zeros(images.rows(), images.cols());
    for j in 0..images.cols() {
        out.set_column(
            j,
            &softmax_pullback(&images.column(j), &cotangent.column(j)),
        );
    }
    Ok(out)
}
