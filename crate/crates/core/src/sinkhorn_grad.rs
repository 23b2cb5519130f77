//! Reverse-mode gradient of the entropic loss `⟨P, C⟩ − ε H(P)` with respect to the
//! source marginal `a`, for a fixed number of Sinkhorn iterations.
//!
//! The forward pass records every iterate. The backward pass walks the record from the
//! last iteration to the first and accumulates `ā`. Because the iteration count is
//! fixed, the gradient is that of the truncated solver, not of the limiting plan.
//!
//! Both traces replay the same function of `a`, so vanilla and log gradients agree up to
//! rounding. The raw gradient has an arbitrary component along `1`; callers comparing
//! against finite differences on the simplex should project it out.

use alloc::vec;
use alloc::vec::Vec;

use crate::entropy::entropic_loss;
use crate::error::{Error, Result};
use crate::kernel::CostKernelPair;
use crate::linalg::{diag_scale, Matrix};
use crate::simplex::Histogram;
use crate::sinkhorn::{
    check_marginals, ln_all, log_residuals, plan_from_potentials, safe_div, update_f, update_g,
    Coupling, ScalingState, SinkhornResult, SolveOptions, SolverMode,
};
use crate::softmin::{column_softmin_weights, residual, row_softmin_weights};

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub result: SinkhornResult,
    /// Unprojected `∂loss/∂a`.
    pub grad_a: Vec<f64>,
}

/// Iterates `u⁽⁰⁾..u⁽ᴸ⁾`, `v⁽⁰⁾..v⁽ᴸ⁾` of the multiplicative solver.
#[derive(Debug, Clone)]
pub struct VanillaTrace<'k> {
    ck: &'k CostKernelPair,
    a: Histogram,
    b: Histogram,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Iterates `f⁽⁰⁾..f⁽ᴸ⁾`, `g⁽⁰⁾..g⁽ᴸ⁾` of the log-domain solver.
#[derive(Debug, Clone)]
pub struct LogTrace<'k> {
    ck: &'k CostKernelPair,
    a: Histogram,
    b: Histogram,
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
}

/// `x ⊙ y` with `0 · ±∞ = 0`; a vanishing plan entry contributes nothing.
fn guarded_mul(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        x * y
    }
}

fn mul3(x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| a * b / c)
        .collect()
}

impl<'k> VanillaTrace<'k> {
    pub fn record(
        a: &Histogram,
        b: &Histogram,
        ck: &'k CostKernelPair,
        iters: usize,
    ) -> Result<Self> {
        if iters == 0 {
            return Err(Error::TraceTooShort {
                needed: 1,
                found: 0,
            });
        }
        check_marginals(a, b, ck)?;
        a.require_positive()?;
        b.require_positive()?;
        ck.require_nondegenerate()?;
        let k = ck.kernel();
        let (m, n) = ck.shape();
        let mut u = Vec::with_capacity(iters + 1);
        let mut v = Vec::with_capacity(iters + 1);
        u.push(vec![1.0; m]);
        v.push(vec![1.0; n]);
        for it in 1..=iters {
            let un = safe_div(a.values(), &k.mul_vec(&v[it - 1]), "u = a / Kv", it)?;
            let vn = safe_div(b.values(), &k.tr_mul_vec(&un), "v = b / Ktu", it)?;
            u.push(un);
            v.push(vn);
        }
        Ok(Self {
            ck,
            a: a.clone(),
            b: b.clone(),
            u,
            v,
        })
    }

    pub fn iterations(&self) -> usize {
        self.u.len() - 1
    }

    /// Final plan `diag(u⁽ᴸ⁾) K diag(v⁽ᴸ⁾)`.
    pub fn plan(&self) -> Matrix {
        let l = self.iterations();
        diag_scale(&self.u[l], self.ck.kernel(), &self.v[l]).expect("trace shapes match kernel")
    }

    pub fn result(&self) -> Result<SinkhornResult> {
        let l = self.iterations();
        let k = self.ck.kernel();
        let (u, v) = (&self.u[l], &self.v[l]);
        let plan = self.plan();
        if !plan.is_finite() {
            return Err(Error::NumericOverflow {
                stage: "coupling",
                iteration: l,
            });
        }
        let resid = |x: &[f64], y: Vec<f64>, t: &[f64]| -> f64 {
            let d: Vec<f64> = x
                .iter()
                .zip(&y)
                .zip(t)
                .map(|((p, q), r)| p * q - r)
                .collect();
            crate::linalg::norm2(&d)
        };
        let errs = (
            resid(u, k.mul_vec(v), self.a.values()),
            resid(v, k.tr_mul_vec(u), self.b.values()),
        );
        assemble(
            &self.a,
            &self.b,
            self.ck,
            plan,
            ScalingState {
                f: u.iter()
                    .map(|&x| self.ck.epsilon() * libm::log(x))
                    .collect(),
                g: v.iter()
                    .map(|&x| self.ck.epsilon() * libm::log(x))
                    .collect(),
                u: Some(u.clone()),
                v: Some(v.clone()),
                iteration: l,
            },
            errs,
        )
    }

    /// Replays the recorded iterates backwards and returns `∂loss/∂a`.
    pub fn backward(&self) -> Vec<f64> {
        let l = self.iterations();
        let ck = self.ck;
        let (k, c, eps) = (ck.kernel(), ck.cost(), ck.epsilon());
        let plan = self.plan();

        // (C + ε log P) ⊙ K
        let pk = Matrix::from_fn(k.rows(), k.cols(), |i, j| {
            let p = plan.get(i, j);
            if p == 0.0 {
                0.0
            } else {
                (c.get(i, j) + eps * libm::log(p)) * k.get(i, j)
            }
        });

        let (ul, vl) = (&self.u[l], &self.v[l]);
        let vbar = pk.tr_mul_vec(ul);
        let ktu = k.tr_mul_vec(ul);
        let back = k.mul_vec(&mul3(&vbar, vl, &ktu));
        let mut ubar: Vec<f64> = pk
            .mul_vec(vl)
            .iter()
            .zip(&back)
            .map(|(x, y)| x - y)
            .collect();

        let kv = k.mul_vec(&self.v[l - 1]);
        let mut abar: Vec<f64> = ubar.iter().zip(&kv).map(|(x, d)| x / d).collect();

        for ell in (1..l).rev() {
            let kv = k.mul_vec(&self.v[ell]);
            let vbar: Vec<f64> = k
                .tr_mul_vec(&mul3(&ubar, &self.u[ell + 1], &kv))
                .into_iter()
                .map(|x| -x)
                .collect();
            let ktu = k.tr_mul_vec(&self.u[ell]);
            ubar = k
                .mul_vec(&mul3(&vbar, &self.v[ell], &ktu))
                .into_iter()
                .map(|x| -x)
                .collect();
            let kv_prev = k.mul_vec(&self.v[ell - 1]);
            for ((acc, x), d) in abar.iter_mut().zip(&ubar).zip(&kv_prev) {
                *acc += x / d;
            }
        }
        abar
    }
}

fn assemble(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    plan: Matrix,
    state: ScalingState,
    errs: (f64, f64),
) -> Result<SinkhornResult> {
    let loss = entropic_loss(&plan, ck.cost(), ck.epsilon())?;
    let tol = SolveOptions::default().tolerance;
    Ok(SinkhornResult {
        iterations_run: state.iteration,
        converged: errs.0 <= tol && errs.1 <= tol,
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

impl<'k> LogTrace<'k> {
    pub fn record(
        a: &Histogram,
        b: &Histogram,
        ck: &'k CostKernelPair,
        iters: usize,
    ) -> Result<Self> {
        if iters == 0 {
            return Err(Error::TraceTooShort {
                needed: 1,
                found: 0,
            });
        }
        check_marginals(a, b, ck)?;
        a.require_positive()?;
        b.require_positive()?;
        let (m, n) = ck.shape();
        let (cost, eps) = (ck.cost(), ck.epsilon());
        let log_a = ln_all(a.values());
        let log_b = ln_all(b.values());
        let mut f = Vec::with_capacity(iters + 1);
        let mut g = Vec::with_capacity(iters + 1);
        f.push(vec![0.0; m]);
        g.push(vec![0.0; n]);
        for it in 1..=iters {
            let mut fi = f[it - 1].clone();
            let mut gi = g[it - 1].clone();
            update_f(&mut fi, &gi, &log_a, cost, eps);
            update_g(&fi, &mut gi, &log_b, cost, eps);
            if fi.iter().chain(&gi).any(|x| !x.is_finite()) {
                return Err(Error::NumericOverflow {
                    stage: "log-domain potentials",
                    iteration: it,
                });
            }
            f.push(fi);
            g.push(gi);
        }
        Ok(Self {
            ck,
            a: a.clone(),
            b: b.clone(),
            f,
            g,
        })
    }

    pub fn iterations(&self) -> usize {
        self.f.len() - 1
    }

    pub fn plan(&self) -> Matrix {
        let l = self.iterations();
        plan_from_potentials(&self.f[l], &self.g[l], self.ck.cost(), self.ck.epsilon())
    }

    pub fn result(&self) -> Result<SinkhornResult> {
        let l = self.iterations();
        let (cost, eps) = (self.ck.cost(), self.ck.epsilon());
        let errs = log_residuals(
            &self.f[l],
            &self.g[l],
            &ln_all(self.a.values()),
            &ln_all(self.b.values()),
            cost,
            eps,
        );
        let lift = |p: &[f64]| -> Option<Vec<f64>> {
            let out: Vec<f64> = p.iter().map(|&x| libm::exp(x / eps)).collect();
            out.iter().all(|x| x.is_finite() && *x > 0.0).then_some(out)
        };
        assemble(
            &self.a,
            &self.b,
            self.ck,
            self.plan(),
            ScalingState {
                u: lift(&self.f[l]),
                v: lift(&self.g[l]),
                f: self.f[l].clone(),
                g: self.g[l].clone(),
                iteration: l,
            },
            errs,
        )
    }

    /// Replays the recorded potentials backwards and returns `∂loss/∂a`.
    pub fn backward(&self) -> Vec<f64> {
        let l = self.iterations();
        let (c, eps) = (self.ck.cost(), self.ck.epsilon());
        let a = self.a.values();

        // (C + ε log P) ⊙ P with log P = −R/ε, so C + ε log P = f 1ᵀ + 1 gᵀ.
        let r = residual(&self.f[l], &self.g[l], c);
        let pp = Matrix::from_fn(r.rows(), r.cols(), |i, j| {
            let p = libm::exp(-r.get(i, j) / eps);
            guarded_mul(c.get(i, j) - r.get(i, j), p)
        });
        let gbar: Vec<f64> = pp.col_sums().into_iter().map(|x| x / eps).collect();
        let w = column_softmin_weights(&residual(&self.f[l], &self.g[l - 1], c), eps);
        let wg = w.mul_vec(&gbar);
        let mut fbar: Vec<f64> = pp
            .row_sums()
            .into_iter()
            .zip(&wg)
            .map(|(x, y)| x / eps - y)
            .collect();
        let mut abar: Vec<f64> = fbar.iter().zip(a).map(|(x, ai)| eps * x / ai).collect();

        for ell in (1..l).rev() {
            let x = row_softmin_weights(&residual(&self.f[ell], &self.g[ell], c), eps);
            let gbar: Vec<f64> = x.tr_mul_vec(&fbar).into_iter().map(|v| -v).collect();
            let w = column_softmin_weights(&residual(&self.f[ell], &self.g[ell - 1], c), eps);
            fbar = w.mul_vec(&gbar).into_iter().map(|v| -v).collect();
            for ((acc, x), ai) in abar.iter_mut().zip(&fbar).zip(a) {
                *acc += eps * x / ai;
            }
        }
        abar
    }
}

/// Runs exactly `iters` multiplicative iterations and differentiates the loss.
pub fn solve_vanilla_with_grad(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    iters: usize,
) -> Result<GradResult> {
    let trace = VanillaTrace::record(a, b, ck, iters)?;
    Ok(GradResult {
        result: trace.result()?,
        grad_a: trace.backward(),
    })
}

/// Runs exactly `iters` log-domain iterations and differentiates the loss.
pub fn solve_log_with_grad(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    iters: usize,
) -> Result<GradResult> {
    let trace = LogTrace::record(a, b, ck, iters)?;
    Ok(GradResult {
        result: trace.result()?,
        grad_a: trace.backward(),
    })
}

/// Dispatch on a vanilla/log mode; the parallel mode differentiates like vanilla.
pub fn solve_with_grad(
    a: &Histogram,
    b: &Histogram,
    ck: &CostKernelPair,
    iters: usize,
    mode: SolverMode,
) -> Result<GradResult> {
    match mode {
        SolverMode::Log => solve_log_with_grad(a, b, ck, iters),
        SolverMode::Vanilla | SolverMode::Parallel => solve_vanilla_with_grad(a, b, ck, iters),
    }
}
