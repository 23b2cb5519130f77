//! Wasserstein dictionary learning.
//!
//! Atoms `A = softmax(α)` (N×S) and per-document weights `w_m = softmax(λ_{·,m})` are
//! fitted so that the barycenter of the atoms under `w_m` reconstructs document `y_m`.
//! Each step draws a mini-batch, runs the barycenter gradient solver per document,
//! pulls the gradients back through the softmax maps and takes one optimizer step.
//!
//! Per-document evaluation is routed through a [`BatchExecutor`] so a caller with
//! threads can evaluate a batch concurrently. Results are always reduced in increasing
//! document index order, which keeps training bit-reproducible for any executor.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::barycenter::{barycenter, BarycenterMode, BarycenterProblem};
use crate::barycenter_grad::{barycenter_grad, QuadraticLoss};
use crate::error::{Error, Result};
use crate::kernel::CostKernelPair;
use crate::linalg::Matrix;
use crate::optim::{Hyper, OptimizerKind, OptimizerState};
use crate::simplex::{
    softmax_mat, softmax_mat_pullback, softmax_pullback, softmax_vec, HistogramBatch,
};
use crate::sinkhorn::{SolveOptions, SolverMode};

/// Mixed into the seed of the batch sampler so sampling and initialization draw from
/// unrelated streams.
const SAMPLER_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Unconstrained logits: `alpha` is N×S, `lambda` is S×M.
#[derive(Debug, Clone, PartialEq)]
pub struct WdlParams {
    pub alpha: Matrix,
    pub lambda: Matrix,
}

impl WdlParams {
    pub fn atoms(&self) -> Result<HistogramBatch> {
        softmax_mat(&self.alpha)
    }

    pub fn weights(&self) -> Result<HistogramBatch> {
        softmax_mat(&self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitScheme {
    #[default]
    Zeros,
    /// I.i.d. `N(0, σ²)` logits.
    Gaussian { sigma: f64 },
}

pub fn init_params(n: usize, s: usize, m: usize, seed: u64, scheme: InitScheme) -> WdlParams {
    match scheme {
        InitScheme::Zeros => WdlParams {
            alpha: Matrix::zeros(n, s),
            lambda: Matrix::zeros(s, m),
        },
        InitScheme::Gaussian { sigma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma.abs()).expect("finite sigma");
            let alpha = Matrix::from_fn(n, s, |_, _| normal.sample(&mut rng));
            let lambda = Matrix::from_fn(s, m, |_, _| normal.sample(&mut rng));
            WdlParams { alpha, lambda }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WdlConfig {
    pub topics: usize,
    /// Fixed iteration count of the inner barycenter solver.
    pub inner_iters: usize,
    pub mode: BarycenterMode,
    pub optimizer: OptimizerKind,
    pub hyper: Hyper,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub init: InitScheme,
    /// Apply the batch-mean weight gradient to every column of `λ` instead of only the
    /// sampled ones.
    pub lambda_broadcast: bool,
}

impl Default for WdlConfig {
    fn default() -> Self {
        Self {
            topics: 2,
            inner_iters: 50,
            mode: BarycenterMode::Parallel,
            optimizer: OptimizerKind::Adam,
            hyper: Hyper::default(),
            batch_size: 8,
            steps: 100,
            seed: 0,
            init: InitScheme::Zeros,
            lambda_broadcast: false,
        }
    }
}

impl WdlConfig {
    pub fn validate(&self, data: &HistogramBatch, ck: &CostKernelPair) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::InvalidConfig("topics must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1"));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidConfig("inner iterations must be at least 1"));
        }
        if let InitScheme::Gaussian { sigma } = self.init {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::InvalidConfig(
                    "init scale must be finite and non-negative",
                ));
            }
        }
        self.hyper.validate()?;
        let (r, c) = ck.shape();
        if r != c {
            return Err(Error::InvalidConfig(
                "dictionary learning needs a square cost matrix",
            ));
        }
        if data.bins() != r {
            return Err(Error::ShapeMismatch {
                expected: r,
                found: data.bins(),
            });
        }
        if self.batch_size > data.count() {
            return Err(Error::BatchLargerThanData {
                batch: self.batch_size,
                documents: data.count(),
            });
        }
        Ok(())
    }
}

/// Loss and logit gradients for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentGradient {
    pub index: usize,
    pub loss: f64,
    /// `∂loss/∂α`, N×S.
    pub grad_alpha: Matrix,
    /// `∂loss/∂λ_{·,m}`, length S.
    pub grad_lambda: Vec<f64>,
}

/// Evaluates a per-document closure over a batch. Implementations may run the closure
/// concurrently but must return results in the order of `batch`.
pub trait BatchExecutor {
    fn map(
        &self,
        batch: &[usize],
        eval: &(dyn Fn(usize) -> Result<DocumentGradient> + Sync),
    ) -> Vec<Result<DocumentGradient>>;
}

/// Evaluates documents one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn map(
        &self,
        batch: &[usize],
        eval: &(dyn Fn(usize) -> Result<DocumentGradient> + Sync),
    ) -> Vec<Result<DocumentGradient>> {
        batch.iter().map(|&m| eval(m)).collect()
    }
}

/// Loss `‖b(A, softmax(λ_m)) − y_m‖²` and its gradients w.r.t. `α` and `λ_{·,m}`.
pub fn document_gradient(
    atoms: &HistogramBatch,
    lambda_col: &[f64],
    data: &HistogramBatch,
    index: usize,
    ck: &CostKernelPair,
    inner_iters: usize,
    mode: BarycenterMode,
) -> Result<DocumentGradient> {
    let w = softmax_vec(lambda_col)?;
    let problem = BarycenterProblem::new(atoms, &w, ck)?;
    let loss = QuadraticLoss::new(data.histogram(index));
    let g = barycenter_grad(&problem, &loss, inner_iters, mode)?;
    Ok(DocumentGradient {
        index,
        loss: g.loss,
        grad_alpha: softmax_mat_pullback(atoms.matrix(), &g.grad_atoms)?,
        grad_lambda: softmax_pullback(w.values(), &g.grad_weights),
    })
}

/// Sequential epochs over a seeded permutation of the documents; a trailing partial
/// batch is dropped.
#[derive(Debug, Clone)]
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchSampler {
    fn new(documents: usize, batch: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_STREAM),
            order: (0..documents).collect(),
            cursor: documents,
            batch,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let mut out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone)]
enum LambdaOptimizer {
    PerColumn(Vec<OptimizerState>),
    Broadcast(Box<OptimizerState>),
}

/// Parameters, optimizer moments and sampler position of a training run.
#[derive(Debug, Clone)]
pub struct WdlState {
    pub params: WdlParams,
    alpha_opt: OptimizerState,
    lambda_opt: LambdaOptimizer,
    sampler: BatchSampler,
    steps_taken: usize,
}

impl WdlState {
    pub fn new(data: &HistogramBatch, ck: &CostKernelPair, cfg: &WdlConfig) -> Result<Self> {
        cfg.validate(data, ck)?;
        let (n, m, s) = (data.bins(), data.count(), cfg.topics);
        let params = init_params(n, s, m, cfg.seed, cfg.init);
        Ok(Self::from_params(params, cfg, m))
    }

    /// Starts from explicit parameters; shapes are checked on the first step.
    pub fn from_params(params: WdlParams, cfg: &WdlConfig, documents: usize) -> Self {
        let (n, s) = params.alpha.shape();
        let lambda_opt = if cfg.lambda_broadcast {
            LambdaOptimizer::Broadcast(Box::new(OptimizerState::new(
                cfg.optimizer,
                cfg.hyper,
                s * documents,
            )))
        } else {
            LambdaOptimizer::PerColumn(
                (0..documents)
                    .map(|_| OptimizerState::new(cfg.optimizer, cfg.hyper, s))
                    .collect(),
            )
        };
        Self {
            params,
            alpha_opt: OptimizerState::new(cfg.optimizer, cfg.hyper, n * s),
            lambda_opt,
            sampler: BatchSampler::new(documents, cfg.batch_size, cfg.seed),
            steps_taken: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }
}

/// One mini-batch update. Returns the batch-mean loss at the parameters before the step.
pub fn wdl_step(
    state: &mut WdlState,
    data: &HistogramBatch,
    ck: &CostKernelPair,
    cfg: &WdlConfig,
    exec: &dyn BatchExecutor,
) -> Result<f64> {
    let (n, s) = state.params.alpha.shape();
    if state.params.lambda.shape() != (s, data.count()) || n != data.bins() {
        return Err(Error::DimensionMismatch {
            expected: (data.bins(), data.count()),
            found: (n, state.params.lambda.cols()),
        });
    }
    let batch = state.sampler.next_batch();
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let atoms = state.params.atoms()?;
    let lambda = &state.params.lambda;
    let eval = |m: usize| {
        document_gradient(
            &atoms,
            &lambda.column(m),
            data,
            m,
            ck,
            cfg.inner_iters,
            cfg.mode,
        )
    };
    let mut grads = Vec::with_capacity(batch.len());
    for g in exec.map(&batch, &eval) {
        grads.push(g?);
    }
    grads.sort_by_key(|g| g.index);

    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut g_alpha = vec![0.0; n * s];
    let mut g_lambda_mean = vec![0.0; s];
    for g in &grads {
        loss += g.loss;
        for (acc, x) in g_alpha.iter_mut().zip(g.grad_alpha.as_slice()) {
            *acc += x;
        }
        for (acc, x) in g_lambda_mean.iter_mut().zip(&g.grad_lambda) {
            *acc += x;
        }
    }
    g_alpha.iter_mut().for_each(|x| *x *= scale);
    g_lambda_mean.iter_mut().for_each(|x| *x *= scale);

    state
        .alpha_opt
        .step(state.params.alpha.as_mut_slice(), &g_alpha)?;
    let lambda = &mut state.params.lambda;
    match &mut state.lambda_opt {
        LambdaOptimizer::PerColumn(states) => {
            for g in &grads {
                let gm: Vec<f64> = g.grad_lambda.iter().map(|x| x * scale).collect();
                let mut col = lambda.column(g.index);
                states[g.index].step(&mut col, &gm)?;
                lambda.set_column(g.index, &col);
            }
        }
        LambdaOptimizer::Broadcast(st) => {
            let m = lambda.cols();
            let full: Vec<f64> = (0..s * m).map(|k| g_lambda_mean[k / m]).collect();
            st.step(lambda.as_mut_slice(), &full)?;
        }
    }
    state.steps_taken += 1;
    Ok(loss * scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WdlTrained {
    /// `softmax(α)`, N×S.
    pub atoms: HistogramBatch,
    /// `softmax(λ)`, S×M.
    pub weights: HistogramBatch,
    pub params: WdlParams,
    /// Batch loss of every step, in step order.
    pub loss_history: Vec<f64>,
}

/// Trains on the calling thread.
pub fn wdl_train(
    data: &HistogramBatch,
    ck: &CostKernelPair,
    cfg: &WdlConfig,
) -> Result<WdlTrained> {
    wdl_train_with(data, ck, cfg, &Sequential)
}

pub fn wdl_train_with(
    data: &HistogramBatch,
    ck: &CostKernelPair,
    cfg: &WdlConfig,
    exec: &dyn BatchExecutor,
) -> Result<WdlTrained> {
    let mut state = WdlState::new(data, ck, cfg)?;
    let mut loss_history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        loss_history.push(wdl_step(&mut state, data, ck, cfg, exec)?);
    }
    Ok(WdlTrained {
        atoms: state.params.atoms()?,
        weights: state.params.weights()?,
        params: state.params,
        loss_history,
    })
}

/// Column `m` is the barycenter of `atoms` under weights `weights_{·,m}` after
/// `inner_iters` fixed iterations.
pub fn reconstruct(
    atoms: &HistogramBatch,
    weights: &HistogramBatch,
    ck: &CostKernelPair,
    inner_iters: usize,
    mode: BarycenterMode,
) -> Result<Matrix> {
    if weights.bins() != atoms.count() {
        return Err(Error::ShapeMismatch {
            expected: atoms.count(),
            found: weights.bins(),
        });
    }
    let solver_mode = match mode {
        BarycenterMode::Parallel => SolverMode::Parallel,
        BarycenterMode::Log => SolverMode::Log,
    };
    let opts = SolveOptions::fixed(inner_iters, solver_mode);
    let mut cols = Vec::with_capacity(weights.count());
    for m in 0..weights.count() {
        let w = weights.histogram(m);
        let problem = BarycenterProblem::new(atoms, &w, ck)?;
        cols.push(barycenter(&problem, mode, &opts)?.0.barycenter);
    }
    Matrix::from_columns(&cols)
}
