//! Entropic Wasserstein barycenters of `S` atoms with weights `w`.
//!
//! Both solvers return the full iteration record so the gradient module can replay it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::CostKernelPair;
use crate::linalg::{norm2, Matrix};
use crate::simplex::{Histogram, HistogramBatch};
use crate::sinkhorn::{ln_all, safe_div_mat, SolveOptions};
use crate::softmin::{min_col_unchecked, min_row_unchecked, residual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BarycenterMode {
    #[default]
    Parallel,
    Log,
}

/// Atoms `A` (M×S, columns on the simplex), weights `w` (length S) and a cost/kernel pair
/// whose rows index atom bins and whose columns index barycenter bins.
#[derive(Debug, Clone, Copy)]
pub struct BarycenterProblem<'p> {
    atoms: &'p HistogramBatch,
    weights: &'p Histogram,
    ck: &'p CostKernelPair,
}

impl<'p> BarycenterProblem<'p> {
    pub fn new(
        atoms: &'p HistogramBatch,
        weights: &'p Histogram,
        ck: &'p CostKernelPair,
    ) -> Result<Self> {
        if atoms.bins() != ck.shape().0 {
            return Err(Error::ShapeMismatch {
                expected: ck.shape().0,
                found: atoms.bins(),
            });
        }
        if atoms.count() != weights.len() {
            return Err(Error::ColumnCountMismatch {
                left: atoms.count(),
                right: weights.len(),
            });
        }
        Ok(Self { atoms, weights, ck })
    }

    pub fn atoms(&self) -> &HistogramBatch {
        self.atoms
    }

    pub fn weights(&self) -> &Histogram {
        self.weights
    }

    pub fn kernel(&self) -> &CostKernelPair {
        self.ck
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterResult {
    /// The barycenter. It sums to one only up to the solver residual.
    pub barycenter: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Frobenius residual of the atom-side marginal constraint.
    pub residual: f64,
}

/// Per-iteration record, index `ℓ = 0..=L`. Entry 0 holds the initialization.
#[derive(Debug, Clone, PartialEq)]
pub enum BarycenterTrace {
    Parallel {
        u: Vec<Matrix>,
        v: Vec<Matrix>,
        b: Vec<Vec<f64>>,
    },
    Log {
        f: Vec<Matrix>,
        g: Vec<Matrix>,
        log_b: Vec<Vec<f64>>,
    },
}

impl BarycenterTrace {
    pub fn iterations(&self) -> usize {
        match self {
            Self::Parallel { u, .. } => u.len() - 1,
            Self::Log { f, .. } => f.len() - 1,
        }
    }

    pub fn mode(&self) -> BarycenterMode {
        match self {
            Self::Parallel { .. } => BarycenterMode::Parallel,
            Self::Log { .. } => BarycenterMode::Log,
        }
    }
}

fn overflow(stage: &'static str, iteration: usize) -> Error {
    Error::NumericOverflow { stage, iteration }
}

/// Multiplicative barycenter iteration from `U = V = 1`.
///
/// `b` is formed as `exp(Σ_s w_s log (KᵀU)_s)` so that tiny scalings do not underflow a
/// direct product of powers.
pub fn barycenter_parallel(
    problem: &BarycenterProblem<'_>,
    opts: &SolveOptions,
) -> Result<(BarycenterResult, BarycenterTrace)> {
    opts.validate()?;
    let ck = problem.ck;
    ck.require_nondegenerate()?;
    let k = ck.kernel();
    let (m, n) = ck.shape();
    let s = problem.atoms.count();
    let a = problem.atoms.matrix();
    let w = problem.weights.values();

    let mut us = vec![Matrix::filled(m, s, 1.0)];
    let mut vs = vec![Matrix::filled(n, s, 1.0)];
    let mut bs = vec![vec![0.0; n]];
    let mut resid = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let u = safe_div_mat(a, &k.mul_mat(&vs[it - 1]), "U = A / KV", it)?;
        let ktu = k.tr_mul_mat(&u);
        let mut b = vec![0.0; n];
        for (j, bj) in b.iter_mut().enumerate() {
            let mut lb = 0.0;
            for (col, ws) in w.iter().enumerate() {
                let x = ktu.get(j, col);
                if !(x > 0.0) || !x.is_finite() {
                    return Err(overflow("log KtU", it));
                }
                lb += ws * libm::log(x);
            }
            *bj = libm::exp(lb);
        }
        let v = Matrix::from_fn(n, s, |j, col| b[j] / ktu.get(j, col));
        if !v.is_finite() {
            return Err(overflow("V = b / KtU", it));
        }
        let kv = k.mul_mat(&v);
        resid = norm2(
            &u.as_slice()
                .iter()
                .zip(kv.as_slice())
                .zip(a.as_slice())
                .map(|((x, y), t)| x * y - t)
                .collect::<Vec<_>>(),
        );
        us.push(u);
        vs.push(v);
        bs.push(b);
        if !opts.fixed_iters && resid <= opts.tolerance {
            break;
        }
    }

    let iterations_run = us.len() - 1;
    let result = BarycenterResult {
        barycenter: bs[iterations_run].clone(),
        iterations_run,
        converged: resid <= opts.tolerance,
        residual: resid,
    };
    Ok((
        result,
        BarycenterTrace::Parallel {
            u: us,
            v: vs,
            b: bs,
        },
    ))
}

/// Log-domain barycenter iteration from `F = 0`, `G = 0`. Atoms must be strictly positive.
pub fn barycenter_log(
    problem: &BarycenterProblem<'_>,
    opts: &SolveOptions,
) -> Result<(BarycenterResult, BarycenterTrace)> {
    opts.validate()?;
    problem.atoms.require_positive()?;
    let ck = problem.ck;
    let (cost, eps) = (ck.cost(), ck.epsilon());
    let (m, n) = ck.shape();
    let s = problem.atoms.count();
    let w = problem.weights.values();
    let log_a: Vec<Vec<f64>> = (0..s)
        .map(|col| ln_all(&problem.atoms.matrix().column(col)))
        .collect();

    let mut fs = vec![Matrix::zeros(m, s)];
    let mut gs = vec![Matrix::zeros(n, s)];
    let mut lbs = vec![vec![0.0; n]];
    let mut resid = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let (f_prev, g_prev) = (&fs[it - 1], &gs[it - 1]);
        let mut f_cols = Vec::with_capacity(s);
        let mut g_old = Vec::with_capacity(s);
        let mut rc = Vec::with_capacity(s);
        for (col, la_col) in log_a.iter().enumerate() {
            let mut f = f_prev.column(col);
            let g = g_prev.column(col);
            let mins = min_row_unchecked(&residual(&f, &g, cost), eps);
            for ((fi, la), mi) in f.iter_mut().zip(la_col).zip(mins) {
                *fi += eps * la + mi;
            }
            rc.push(min_col_unchecked(&residual(&f, &g, cost), eps));
            f_cols.push(f);
            g_old.push(g);
        }

        let mut log_b = vec![0.0; n];
        for (col, ws) in w.iter().enumerate() {
            for (j, lb) in log_b.iter_mut().enumerate() {
                *lb -= ws * (g_old[col][j] + rc[col][j]) / eps;
            }
        }
        let g_cols: Vec<Vec<f64>> = (0..s)
            .map(|col| {
                (0..n)
                    .map(|j| g_old[col][j] + eps * log_b[j] + rc[col][j])
                    .collect()
            })
            .collect();

        let mut sq = 0.0;
        for col in 0..s {
            let mins = min_row_unchecked(&residual(&f_cols[col], &g_cols[col], cost), eps);
            for (mi, la) in mins.iter().zip(&log_a[col]) {
                let d = -mi / eps - la;
                sq += d * d;
            }
        }
        resid = libm::sqrt(sq);
        let f = Matrix::from_columns(&f_cols)?;
        let g = Matrix::from_columns(&g_cols)?;
        if !f.is_finite() || !g.is_finite() || log_b.iter().any(|x| !x.is_finite()) {
            return Err(overflow("log-domain potentials", it));
        }
        fs.push(f);
        gs.push(g);
        lbs.push(log_b);
        if !opts.fixed_iters && resid <= opts.tolerance {
            break;
        }
    }

    let iterations_run = fs.len() - 1;
    let result = BarycenterResult {
        barycenter: lbs[iterations_run].iter().map(|&x| libm::exp(x)).collect(),
        iterations_run,
        converged: resid <= opts.tolerance,
        residual: resid,
    };
    Ok((
        result,
        BarycenterTrace::Log {
            f: fs,
            g: gs,
            log_b: lbs,
        },
    ))
}

pub fn barycenter(
    problem: &BarycenterProblem<'_>,
    mode: BarycenterMode,
    opts: &SolveOptions,
) -> Result<(BarycenterResult, BarycenterTrace)> {
    match mode {
        BarycenterMode::Parallel => barycenter_parallel(problem, opts),
        BarycenterMode::Log => barycenter_log(problem, opts),
    }
}
