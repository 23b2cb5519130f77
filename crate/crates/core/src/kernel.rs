use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A ground cost together with its Gibbs kernel `exp(−cost/ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostKernelPair {
    cost: Matrix,
    epsilon: f64,
    kernel: Matrix,
    underflow: bool,
}

impl CostKernelPair {
    #[inline]
    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    #[inline]
    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Set when at least one kernel entry is exactly zero.
    #[inline]
    pub fn underflowed(&self) -> bool {
        self.underflow
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.cost.shape()
    }

    /// Fails if some row or column of the kernel vanished entirely, in which case the
    /// multiplicative iterations divide by zero on the first step.
    pub(crate) fn require_nondegenerate(&self) -> Result<()> {
        if !self.underflow {
            return Ok(());
        }
        for i in 0..self.kernel.rows() {
            if self.kernel.row(i).iter().all(|&k| k == 0.0) {
                return Err(Error::KernelDegenerate {
                    axis: "row",
                    index: i,
                });
            }
        }
        for (j, s) in self.kernel.col_sums().into_iter().enumerate() {
            if s == 0.0 {
                return Err(Error::KernelDegenerate {
                    axis: "column",
                    index: j,
                });
            }
        }
        Ok(())
    }
}

pub fn build_kernel(cost: Matrix, epsilon: f64) -> Result<CostKernelPair> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    if cost.rows() == 0 || cost.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    for (index, &c) in cost.as_slice().iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::NonFiniteEntry { index });
        }
        if c < 0.0 {
            return Err(Error::NegativeEntry { index, value: c });
        }
    }
    let kernel = cost.map(|c| libm::exp(-c / epsilon));
    let underflow = kernel.as_slice().contains(&0.0);
    Ok(CostKernelPair {
        cost,
        epsilon,
        kernel,
        underflow,
    })
}
