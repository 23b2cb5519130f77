//! First-order optimizers operating in place on flat parameter slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Denominator guard `ε̂`.
    pub eps: f64,
    /// Decoupled weight decay `γ`, used by AdamW only.
    pub weight_decay: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)"));
        }
        if !(self.eps >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "eps and weight decay must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Moment estimates and step counter for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: Hyper, len: usize) -> Self {
        Self {
            kind,
            hyper,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(self, theta, grad),
            OptimizerKind::Adam => adam_step(self, theta, grad),
            OptimizerKind::AdamW => adamw_step(self, theta, grad),
        }
    }

    fn check(&self, theta: &[f64], grad: &[f64]) -> Result<()> {
        if theta.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                expected: theta.len(),
                found: grad.len(),
            });
        }
        if self.m.len() != theta.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                found: theta.len(),
            });
        }
        Ok(())
    }
}

/// `θ ← θ − η g`. Moments are left untouched; the step counter still advances.
pub fn sgd_step(state: &mut OptimizerState, theta: &mut [f64], grad: &[f64]) -> Result<()> {
    state.check(theta, grad)?;
    let lr = state.hyper.lr;
    for (p, g) in theta.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    state.t += 1;
    Ok(())
}

/// Updates the moments and returns the bias-corrected step direction `m̂ / (√v̂ + ε̂)`.
fn adam_direction(state: &mut OptimizerState, grad: &[f64]) -> Vec<f64> {
    let Hyper {
        beta1, beta2, eps, ..
    } = state.hyper;
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    let mut dir = Vec::with_capacity(grad.len());
    for ((m, v), &g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grad) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        dir.push(mh / (libm::sqrt(vh) + eps));
    }
    dir
}

pub fn adam_step(state: &mut OptimizerState, theta: &mut [f64], grad: &[f64]) -> Result<()> {
    state.check(theta, grad)?;
    let lr = state.hyper.lr;
    for (p, d) in theta.iter_mut().zip(adam_direction(state, grad)) {
        *p -= lr * d;
    }
    Ok(())
}

/// Adam with decoupled weight decay: `θ ← (1 − ηγ) θ − η m̂ / (√v̂ + ε̂)`.
pub fn adamw_step(state: &mut OptimizerState, theta: &mut [f64], grad: &[f64]) -> Result<()> {
    state.check(theta, grad)?;
    let lr = state.hyper.lr;
    let decay = state.hyper.weight_decay;
    for (p, d) in theta.iter_mut().zip(adam_direction(state, grad)) {
        if decay != 0.0 {
            *p *= 1.0 - lr * decay;
        }
        *p -= lr * d;
    }
    Ok(())
}

/// Elementwise mean of equally shaped gradients.
pub fn minibatch_average(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = grads.first().ok_or(Error::EmptyBatch)?;
    let mut acc = vec![0.0; first.len()];
    for g in grads {
        if g.len() != acc.len() {
            return Err(Error::ShapeMismatch {
                expected: acc.len(),
                found: g.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }
    let n = grads.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
