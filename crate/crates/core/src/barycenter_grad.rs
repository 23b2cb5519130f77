//! Gradients of a quadratic reconstruction loss `‖b(A, w) − t‖²` with respect to the
//! barycenter atoms `A` and weights `w`, by reverse replay of a fixed-length trace.

use alloc::vec;
use alloc::vec::Vec;

use crate::barycenter::{
    barycenter_log, barycenter_parallel, BarycenterMode, BarycenterProblem, BarycenterTrace,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::simplex::Histogram;
use crate::sinkhorn::{SolveOptions, SolverMode};
use crate::softmin::{column_softmin_weights, min_col_unchecked, residual, row_softmin_weights};

/// `‖b − t‖₂²` against a fixed target histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    target: Histogram,
}

impl QuadraticLoss {
    pub fn new(target: Histogram) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &Histogram {
        &self.target
    }

    pub fn value(&self, b: &[f64]) -> f64 {
        b.iter()
            .zip(self.target.values())
            .map(|(x, t)| (x - t) * (x - t))
            .sum()
    }

    /// `∂/∂b = 2 (b − t)`.
    pub fn seed(&self, b: &[f64]) -> Vec<f64> {
        b.iter()
            .zip(self.target.values())
            .map(|(x, t)| 2.0 * (x - t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterGradResult {
    pub barycenter: Vec<f64>,
    pub loss: f64,
    /// `∂loss/∂A`, shape M×S, unprojected.
    pub grad_atoms: Matrix,
    /// `∂loss/∂w`, length S, unprojected.
    pub grad_weights: Vec<f64>,
}

fn check_target(problem: &BarycenterProblem<'_>, loss: &QuadraticLoss) -> Result<()> {
    let n = problem.kernel().shape().1;
    if loss.target().len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            found: loss.target().len(),
        });
    }
    Ok(())
}

fn fixed(iters: usize, mode: SolverMode) -> Result<SolveOptions> {
    if iters == 0 {
        return Err(Error::TraceTooShort {
            needed: 1,
            found: 0,
        });
    }
    Ok(SolveOptions::fixed(iters, mode))
}

/// Fixed-`iters` multiplicative barycenter with its gradient.
pub fn barycenter_parallel_grad(
    problem: &BarycenterProblem<'_>,
    loss: &QuadraticLoss,
    iters: usize,
) -> Result<BarycenterGradResult> {
    check_target(problem, loss)?;
    let opts = fixed(iters, SolverMode::Parallel)?;
    let (res, trace) = barycenter_parallel(problem, &opts)?;
    let BarycenterTrace::Parallel { u, v, b } = &trace else {
        unreachable!("parallel solver records a parallel trace");
    };
    let (grad_atoms, grad_weights) = parallel_backward(problem, loss, u, v, b);
    Ok(BarycenterGradResult {
        loss: loss.value(&res.barycenter),
        barycenter: res.barycenter,
        grad_atoms,
        grad_weights,
    })
}

fn parallel_backward(
    problem: &BarycenterProblem<'_>,
    loss: &QuadraticLoss,
    us: &[Matrix],
    vs: &[Matrix],
    bs: &[Vec<f64>],
) -> (Matrix, Vec<f64>) {
    let k = problem.kernel().kernel();
    let a = problem.atoms().matrix();
    let w = problem.weights().values();
    let (n, s) = (vs[0].rows(), w.len());
    let l = us.len() - 1;

    let weighted_v = |bbar: &[f64], vbar_over: Option<&Matrix>, v: &Matrix| {
        Matrix::from_fn(n, s, |j, col| {
            let mut x = bbar[j] * w[col];
            if let Some(m) = vbar_over {
                x -= m.get(j, col);
            }
            x * v.get(j, col)
        })
    };
    let log_ktu = |u: &Matrix| k.tr_mul_mat(u).map(libm::log);
    let accumulate_w = |acc: &mut [f64], lk: &Matrix, bbar: &[f64], b: &[f64]| {
        for (col, acc) in acc.iter_mut().enumerate() {
            for j in 0..n {
                *acc += lk.get(j, col) * bbar[j] * b[j];
            }
        }
    };

    let mut bbar = loss.seed(&bs[l]);
    let mut ubar = k.mul_mat(&weighted_v(&bbar, None, &vs[l]));
    let mut abar = ubar.zip_map(&k.mul_mat(&vs[l - 1]), |x, d| x / d);
    let mut wbar = vec![0.0; s];
    accumulate_w(&mut wbar, &log_ktu(&us[l]), &bbar, &bs[l]);

    for ell in (1..l).rev() {
        let kv = k.mul_mat(&vs[ell]);
        let inner = Matrix::from_fn(ubar.rows(), s, |i, col| {
            ubar.get(i, col) * us[ell + 1].get(i, col) / kv.get(i, col)
        });
        let vbar = k.tr_mul_mat(&inner).map(|x| -x);
        let ktu = k.tr_mul_mat(&us[ell]);
        let vbar_over = vbar.zip_map(&ktu, |x, d| x / d);
        bbar = vbar_over.row_sums();
        ubar = k.mul_mat(&weighted_v(&bbar, Some(&vbar_over), &vs[ell]));
        let kv_prev = k.mul_mat(&vs[ell - 1]);
        for ((acc, x), d) in abar
            .as_mut_slice()
            .iter_mut()
            .zip(ubar.as_slice())
            .zip(kv_prev.as_slice())
        {
            *acc += x / d;
        }
        accumulate_w(&mut wbar, &ktu.map(libm::log), &bbar, &bs[ell]);
    }
    debug_assert_eq!(abar.shape(), a.shape());
    (abar, wbar)
}

/// Fixed-`iters` log-domain barycenter with its gradient. Atoms must be strictly positive.
pub fn barycenter_log_grad(
    problem: &BarycenterProblem<'_>,
    loss: &QuadraticLoss,
    iters: usize,
) -> Result<BarycenterGradResult> {
    check_target(problem, loss)?;
    let opts = fixed(iters, SolverMode::Log)?;
    let (res, trace) = barycenter_log(problem, &opts)?;
    let BarycenterTrace::Log { f, g, .. } = &trace else {
        unreachable!("log solver records a log trace");
    };
    let (grad_atoms, grad_weights) = log_backward(problem, loss, &res.barycenter, f, g);
    Ok(BarycenterGradResult {
        loss: loss.value(&res.barycenter),
        barycenter: res.barycenter,
        grad_atoms,
        grad_weights,
    })
}

fn log_backward(
    problem: &BarycenterProblem<'_>,
    loss: &QuadraticLoss,
    b: &[f64],
    fs: &[Matrix],
    gs: &[Matrix],
) -> (Matrix, Vec<f64>) {
    let ck = problem.kernel();
    let (cost, eps) = (ck.cost(), ck.epsilon());
    let a = problem.atoms().matrix();
    let w = problem.weights().values();
    let (m, s) = a.shape();
    let l = fs.len() - 1;

    // ∂loss/∂log b
    let mut lbbar: Vec<f64> = loss.seed(b).iter().zip(b).map(|(d, x)| d * x).collect();
    let mut fbar: Vec<Vec<f64>> = vec![vec![0.0; m]; s];
    let mut abar = Matrix::zeros(m, s);
    let mut wbar = vec![0.0; s];

    for ell in (1..=l).rev() {
        let mut gbar: Vec<Vec<f64>> = Vec::new();
        if ell < l {
            gbar = (0..s)
                .map(|col| {
                    let r = residual(&fs[ell].column(col), &gs[ell].column(col), cost);
                    row_softmin_weights(&r, eps)
                        .tr_mul_vec(&fbar[col])
                        .into_iter()
                        .map(|x| -x)
                        .collect()
                })
                .collect();
            lbbar = vec![0.0; lbbar.len()];
            for gb in &gbar {
                for (acc, x) in lbbar.iter_mut().zip(gb) {
                    *acc += eps * x;
                }
            }
        }

        for col in 0..s {
            let f = fs[ell].column(col);
            let g_prev = gs[ell - 1].column(col);
            let r = residual(&f, &g_prev, cost);
            let wmat = column_softmin_weights(&r, eps);
            let mut rhs: Vec<f64> = lbbar.iter().map(|x| w[col] * x / eps).collect();
            if let Some(gb) = gbar.get(col) {
                for (y, x) in rhs.iter_mut().zip(gb) {
                    *y -= x;
                }
            }
            fbar[col] = wmat.mul_vec(&rhs);
            for (i, x) in fbar[col].iter().enumerate() {
                let cur = abar.get(i, col);
                abar.set(i, col, cur + eps * x / a.get(i, col));
            }

            let h = min_col_unchecked(&r, eps);
            let dot: f64 = h
                .iter()
                .zip(&g_prev)
                .zip(&lbbar)
                .map(|((hj, gj), lb)| (gj + hj) * lb)
                .sum();
            wbar[col] -= dot / eps;
        }
    }
    (abar, wbar)
}

/// Dispatches on the barycenter mode.
pub fn barycenter_grad(
    problem: &BarycenterProblem<'_>,
    loss: &QuadraticLoss,
    iters: usize,
    mode: BarycenterMode,
) -> Result<BarycenterGradResult> {
    match mode {
        BarycenterMode::Parallel => barycenter_parallel_grad(problem, loss, iters),
        BarycenterMode::Log => barycenter_log_grad(problem, loss, iters),
    }
}
