//! Forward Sinkhorn solvers.
//!
//! * [`solve_vanilla`] alternates the multiplicative scalings `u = a ⊘ Kv`, `v = b ⊘ Kᵀu`.
//! * [`solve_log`] runs the same fixed point on the dual potentials `f = ε log u`,
//!   `g = ε log v` through soft-minimum reductions, so it never forms `K`.
//! * [`solve_parallel`] runs the multiplicative iteration on `S` histogram pairs at once
//!   with whole-matrix updates and a single global stopping rule.
//!
//! Every solver checks convergence after both half-updates of an iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::entropy::entropic_loss;
use crate::error::{Error, Result};
use crate::kernel::CostKernelPair;
use crate::linalg::{diag_scale, norm2, Matrix};
use crate::simplex::{Histogram, HistogramBatch};
use crate::softmin::{min_col_unchecked, min_row_unchecked, residual};

pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    #[default]
    Vanilla,
    Log,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Iteration budget `L`.
    pub max_iters: usize,
    /// Residual threshold `ρ`.
    pub tolerance: f64,
    pub mode: SolverMode,
    /// Run exactly `max_iters` iterations, ignoring the residual test.
    pub fixed_iters: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tolerance: DEFAULT_TOLERANCE,
            mode: SolverMode::Vanilla,
            fixed_iters: false,
        }
    }
}

impl SolveOptions {
    pub fn fixed(iters: usize, mode: SolverMode) -> Self {
        Self {
            max_iters: iters,
            mode,
            fixed_iters: true,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: SolverMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive"));
        }
        Ok(())
    }

    #[inline]
    fn stop(&self, row: f64, col: f64) -> bool {
        !self.fixed_iters && row <= self.tolerance && col <= self.tolerance
    }
}

/// A transport plan with the marginals it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Matrix,
    pub row_marginal: Histogram,
    pub col_marginal: Histogram,
}

impl Coupling {
    /// `(‖P 1 − a‖∞, ‖Pᵀ 1 − b‖∞)`.
    pub fn marginal_violation(&self) -> (f64, f64) {
        let rows = crate::linalg::max_abs_diff(&self.plan.row_sums(), self.row_marginal.values());
        let cols = crate::linalg::max_abs_diff(&self.plan.col_sums(), self.col_marginal.values());
        (rows, cols)
    }
}

/// Final scaling variables of a solve.
///
/// The potentials are always populated. The multiplicative scalings are present for
/// the vanilla/parallel solvers, and for the log solver whenever `exp(f/ε)` and
/// `exp(g/ε)` are representable.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub u: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub iteration: usize,
}

impl ScalingState {
    fn from_scalings(u: Vec<f64>, v: Vec<f64>, epsilon: f64, iteration: usize) -> Self {
        let f = u.iter().map(|&x| epsilon * libm::log(x)).collect();
        let g = v.iter().map(|&x| epsilon * libm::log(x)).collect();
        Self {
            f,
            g,
            u: Some(u),
            v: Some(v),
            iteration,
        }
    }

    fn from_potentials(f: Vec<f64>, g: Vec<f64>, epsilon: f64, iteration: usize) -> Self {
        let lift = |p: &[f64]| -> Option<Vec<f64>> {
            let out: Vec<f64> = p.iter().map(|&x| libm::exp(x / epsilon)).collect();
            out.iter().all(|x| x.is_finite() && *x > 0.0).then_some(out)
        };
        Self {
            u: lift(&f),
            v: lift(&g),
            f,
            g,
            iteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub state: ScalingState,
    pub iterations_run: usize,
    pub converged: bool,
    /// Row and column residual 2-norms as tested by the stopping rule.
    pub marginal_error: (f64, f64),
    /// Entropic loss at the returned coupling.
    pub loss: f64,
}

pub(crate) fn check_marginals(a: &Histogram, b: &Histogram, ck: &CostKernelPair) -> Result<()> {
    let (m, n) = ck.shape();
    if a.len() != m || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: (m, n),
            found: (a.len(), b.len()),
        });
    }
    Ok(())
}

/// Divides `num` by `den` elementwise, failing on a zero or non-finite quotient input.
pub(crate) fn safe_div(
    num: &[f64],
    den: &[f64],
    stage: &'static str,
    iteration: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(num.len());
    for (&x, &d) in num.iter().zip(den) {
        let q = x / d;
        if !(d > 0.0) || !q.is_finite() {
            return Err(Error::NumericOverflow { stage, iteration });
        }
        out.push(q);
    }
    Ok(out)
}

fn hadamard_residual(x: &[f64], y: &[f64], target: &[f64]) -> f64 {
    let r: Vec<f64> = x
        .iter()
        .zip(y)
        .zip(target)
        .map(|((a, b), t)| a * b - t)
        .collect();
    norm2(&r)
}

/// Multiplicative Sinkhorn iteration from `v⁽⁰⁾ = 1`.
pub fn solve_vanilla(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    opts: &SolveOptions,
) -> Result<SinkhornResult> {
    let n = ck.shape().1;
    solve_vanilla_from(a, b, ck, opts, vec![1.0; n])
}

/// [`solve_vanilla`] with an explicit positive starting scaling `v⁽⁰⁾`.
pub fn solve_vanilla_from(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    opts: &SolveOptions,
    v0: Vec<f64>,
) -> Result<SinkhornResult> {
    opts.validate()?;
    check_marginals(a, b, ck)?;
    if v0.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: b.len(),
            found: v0.len(),
        });
    }
    ck.require_nondegenerate()?;
    let k = ck.kernel();

    let mut u = vec![1.0; a.len()];
    let mut v = v0;
    let mut errs = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        u = safe_div(a.values(), &k.mul_vec(&v), "u = a / Kv", it)?;
        let ktu = k.tr_mul_vec(&u);
        v = safe_div(b.values(), &ktu, "v = b / Ktu", it)?;
        iterations = it;

        errs = (
            hadamard_residual(&u, &k.mul_vec(&v), a.values()),
            hadamard_residual(&v, &k.tr_mul_vec(&u), b.values()),
        );
        if opts.stop(errs.0, errs.1) {
            break;
        }
    }

    let plan = diag_scale(&u, k, &v)?;
    if !plan.is_finite() {
        return Err(Error::NumericOverflow {
            stage: "coupling",
            iteration: iterations,
        });
    }
    finish(
        a,
        b,
        ck,
        opts,
        plan,
        ScalingState::from_scalings(u, v, ck.epsilon(), iterations),
        errs,
    )
}

fn finish(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    opts: &SolveOptions,
    plan: Matrix,
    state: ScalingState,
    errs: (f64, f64),
) -> Result<SinkhornResult> {
    let loss = entropic_loss(&plan, ck.cost(), ck.epsilon())?;
    Ok(SinkhornResult {
        iterations_run: state.iteration,
        converged: errs.0 <= opts.tolerance && errs.1 <= opts.tolerance,
        marginal_error: errs,
        loss,
        state,
        coupling: Coupling {
            plan,
            row_marginal: a.clone(),
            col_marginal: b.clone(),
        },
    })
}

/// One `f`-half-step: `f ← f + ε log a + Min_row R(f, g)`.
pub(crate) fn update_f(f: &mut [f64], g: &[f64], log_a: &[f64], cost: &Matrix, epsilon: f64) {
    let r = residual(f, g, cost);
    for ((fi, la), m) in f.iter_mut().zip(log_a).zip(min_row_unchecked(&r, epsilon)) {
        *fi += epsilon * la + m;
    }
}

/// One `g`-half-step: `g ← g + ε log b + Min_col R(f, g)`.
pub(crate) fn update_g(f: &[f64], g: &mut [f64], log_b: &[f64], cost: &Matrix, epsilon: f64) {
    let r = residual(f, g, cost);
    for ((gj, lb), m) in g.iter_mut().zip(log_b).zip(min_col_unchecked(&r, epsilon)) {
        *gj += epsilon * lb + m;
    }
}

/// Log-domain residuals `‖−Min_row R/ε − log a‖₂` and the column analogue.
pub(crate) fn log_residuals(
    f: &[f64],
    g: &[f64],
    log_a: &[f64],
    log_b: &[f64],
    cost: &Matrix,
    epsilon: f64,
) -> (f64, f64) {
    let r = residual(f, g, cost);
    let diff = |mins: Vec<f64>, target: &[f64]| -> f64 {
        let d: Vec<f64> = mins
            .iter()
            .zip(target)
            .map(|(m, t)| -m / epsilon - t)
            .collect();
        norm2(&d)
    };
    (
        diff(min_row_unchecked(&r, epsilon), log_a),
        diff(min_col_unchecked(&r, epsilon), log_b),
    )
}

pub(crate) fn ln_all(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| libm::log(v)).collect()
}

/// `P = exp(−R(f, g)/ε)`.
pub(crate) fn plan_from_potentials(f: &[f64], g: &[f64], cost: &Matrix, epsilon: f64) -> Matrix {
    residual(f, g, cost).map(|r| libm::exp(-r / epsilon))
}

/// Log-stabilized Sinkhorn from `f⁽⁰⁾ = 0`, `g⁽⁰⁾ = 0`. Requires strictly positive marginals.
pub fn solve_log(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    opts: &SolveOptions,
) -> Result<SinkhornResult> {
    opts.validate()?;
    check_marginals(a, b, ck)?;
    a.require_positive()?;
    b.require_positive()?;
    let (m, n) = ck.shape();
    let eps = ck.epsilon();
    let cost = ck.cost();
    let log_a = ln_all(a.values());
    let log_b = ln_all(b.values());

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut errs = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        update_f(&mut f, &g, &log_a, cost, eps);
        update_g(&f, &mut g, &log_b, cost, eps);
        iterations = it;
        errs = log_residuals(&f, &g, &log_a, &log_b, cost, eps);
        if opts.stop(errs.0, errs.1) {
            break;
        }
    }
    if f.iter().chain(&g).any(|x| !x.is_finite()) {
        return Err(Error::NumericOverflow {
            stage: "log-domain potentials",
            iteration: iterations,
        });
    }

    let plan = plan_from_potentials(&f, &g, cost, eps);
    finish(
        a,
        b,
        ck,
        opts,
        plan,
        ScalingState::from_potentials(f, g, eps, iterations),
        errs,
    )
}

fn check_batch_finite(m: &Matrix, stage: &'static str, iteration: usize) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericOverflow { stage, iteration })
    }
}

/// `num ⊘ den` for matrices, rejecting zero denominators and non-finite quotients.
pub(crate) fn safe_div_mat(
    num: &Matrix,
    den: &Matrix,
    stage: &'static str,
    iteration: usize,
) -> Result<Matrix> {
    let data = safe_div(num.as_slice(), den.as_slice(), stage, iteration)?;
    Matrix::new(num.rows(), num.cols(), data)
}

fn frobenius_residual(x: &Matrix, y: &Matrix, target: &Matrix) -> f64 {
    hadamard_residual(x.as_slice(), y.as_slice(), target.as_slice())
}

/// Multiplicative Sinkhorn on `S` pairs `(A_s, B_s)` sharing one kernel.
///
/// Stopping is global: all columns iterate until both Frobenius residuals fall below `ρ`.
pub fn solve_parallel(
    a: &HistogramBatch,
    b: &HistogramBatch,
    ck: &CostKernelPair,
    opts: &SolveOptions,
) -> Result<Vec<SinkhornResult>> {
    opts.validate()?;
    if a.count() != b.count() {
        return Err(Error::ColumnCountMismatch {
            left: a.count(),
            right: b.count(),
        });
    }
    let (m, n) = ck.shape();
    if a.bins() != m || b.bins() != n {
        return Err(Error::DimensionMismatch {
            expected: (m, n),
            found: (a.bins(), b.bins()),
        });
    }
    ck.require_nondegenerate()?;
    let k = ck.kernel();
    let s = a.count();
    let (am, bm) = (a.matrix(), b.matrix());

    let mut u = Matrix::filled(m, s, 1.0);
    let mut v = Matrix::filled(n, s, 1.0);
    let mut errs = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        u = safe_div_mat(am, &k.mul_mat(&v), "U = A / KV", it)?;
        v = safe_div_mat(bm, &k.tr_mul_mat(&u), "V = B / KtU", it)?;
        iterations = it;
        errs = (
            frobenius_residual(&u, &k.mul_mat(&v), am),
            frobenius_residual(&v, &k.tr_mul_mat(&u), bm),
        );
        if opts.stop(errs.0, errs.1) {
            break;
        }
    }

    let mut out = Vec::with_capacity(s);
    for col in 0..s {
        let (us, vs) = (u.column(col), v.column(col));
        let plan = diag_scale(&us, k, &vs)?;
        check_batch_finite(&plan, "coupling", iterations)?;
        let (ah, bh) = (a.histogram(col), b.histogram(col));
        let col_errs = (
            hadamard_residual(&us, &k.mul_vec(&vs), ah.values()),
            hadamard_residual(&vs, &k.tr_mul_vec(&us), bh.values()),
        );
        let mut res = finish(
            &ah,
            &bh,
            ck,
            opts,
            plan,
            ScalingState::from_scalings(us, vs, ck.epsilon(), iterations),
            col_errs,
        )?;
        res.converged = errs.0 <= opts.tolerance && errs.1 <= opts.tolerance;
        out.push(res);
    }
    Ok(out)
}

/// Dispatches on `opts.mode`; the parallel mode runs a batch of one.
pub fn solve(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    opts: &SolveOptions,
) -> Result<SinkhornResult> {
    match opts.mode {
        SolverMode::Vanilla => solve_vanilla(a, b, ck, opts),
        SolverMode::Log => solve_log(a, b, ck, opts),
        SolverMode::Parallel => {
            let aa = HistogramBatch::from_histograms(core::slice::from_ref(a))?;
            let bb = HistogramBatch::from_histograms(core::slice::from_ref(b))?;
            Ok(solve_parallel(&aa, &bb, ck, opts)?.remove(0))
        }
    }
}
