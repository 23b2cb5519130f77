use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Discrete entropy `H(P) = −Σ P_ij (log P_ij − 1)`, with zero entries contributing 0.
pub fn entropy(p: &Matrix) -> Result<f64> {
    let mut h = 0.0;
    for (index, &x) in p.as_slice().iter().enumerate() {
        if x < 0.0 {
            return Err(Error::NegativeEntry { index, value: x });
        }
        if x > 0.0 {
            h -= x * (libm::log(x) - 1.0);
        }
    }
    Ok(h)
}

/// Entropic transport loss `⟨P, C⟩ − ε H(P)`.
///
/// `epsilon = 0` is accepted and reduces to the linear transport cost.
pub fn entropic_loss(p: &Matrix, cost: &Matrix, epsilon: f64) -> Result<f64> {
    cost.check_shape(p.rows(), p.cols())?;
    let linear: f64 = p
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    if epsilon == 0.0 {
        return Ok(linear);
    }
    Ok(linear - epsilon * entropy(p)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_entropy() {
        let p = Matrix::filled(2, 2, 0.25);
        let expected = 1.0 + libm::log(4.0);
        assert!((entropy(&p).unwrap() - expected).abs() < 1e-15);
        let loss = entropic_loss(&p, &Matrix::zeros(2, 2), 1.0).unwrap();
        assert!((loss + expected).abs() < 1e-15);
    }

    #[test]
    fn zero_entries_contribute_nothing() {
        let p = Matrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let expected = -2.0 * 0.5 * (libm::log(0.5) - 1.0);
        assert!((entropy(&p).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_epsilon_is_linear_cost() {
        let p = Matrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let c = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(entropic_loss(&p, &c, 0.0).unwrap(), 2.5);
    }

    #[test]
    fn errors() {
        let p = Matrix::from_rows(&[[-0.1, 1.1]]).unwrap();
        assert!(matches!(
            entropy(&p),
            Err(Error::NegativeEntry { index: 0, .. })
        ));
        assert!(matches!(
            entropic_loss(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
