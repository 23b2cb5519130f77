//! Entropic optimal transport for desk-scale dense problems.
//!
//! The crate provides
//!
//! * forward Sinkhorn solvers in multiplicative, log-stabilized and batched form ([`sinkhorn`]),
//! * reverse-mode gradients of the entropic loss w.r.t. the source marginal, replayed over a
//!   recorded iteration trace ([`sinkhorn_grad`]),
//! * entropic Wasserstein barycenters ([`barycenter`]) and the gradients of a quadratic
//!   reconstruction loss w.r.t. atoms and weights ([`barycenter_grad`]),
//! * first-order optimizers ([`optim`]) and a Wasserstein dictionary learning trainer ([`wdl`]).
//!
//! All arithmetic is `f64`. The crate is `no_std` and only needs `alloc`; IO, the command
//! line and file formats live in the `otkit` companion crate.
//!
//! ```
//! use otkit_core::{build_kernel, solve_log, Histogram, Matrix, SolveOptions};
//!
//! let cost = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
//! let ck = build_kernel(cost, 0.5).unwrap();
//! let a = Histogram::uniform(2);
//! let res = solve_log(&a, &a, &ck, &SolveOptions::default()).unwrap();
//! assert!(res.converged);
//! ```

#![no_std]
// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod barycenter;
pub mod barycenter_grad;
pub mod entropy;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod simplex;
pub mod sinkhorn;
pub mod sinkhorn_grad;
pub mod softmin;
pub mod wdl;

pub use barycenter::{
    barycenter, barycenter_log, barycenter_parallel, BarycenterMode, BarycenterProblem,
    BarycenterResult, BarycenterTrace,
};
pub use barycenter_grad::{
    barycenter_grad, barycenter_log_grad, barycenter_parallel_grad, BarycenterGradResult,
    QuadraticLoss,
};
pub use entropy::{entropic_loss, entropy};
pub use error::{Error, Result};
pub use kernel::{build_kernel, CostKernelPair};
pub use linalg::{diag_scale, Matrix};
pub use optim::{
    adam_step, adamw_step, minibatch_average, sgd_step, Hyper, OptimizerKind, OptimizerState,
};
pub use simplex::{
    softmax_jacobian_vec, softmax_mat, softmax_mat_pullback, softmax_pullback, softmax_vec,
    validate_histogram, Histogram, HistogramBatch, ValidateOptions,
};
pub use sinkhorn::{
    solve, solve_log, solve_parallel, solve_vanilla, solve_vanilla_from, Coupling, ScalingState,
    SinkhornResult, SolveOptions, SolverMode,
};
pub use sinkhorn_grad::{
    solve_log_with_grad, solve_vanilla_with_grad, solve_with_grad, GradResult, LogTrace,
    VanillaTrace,
};
pub use softmin::{min_col, min_row, residual_matrix, soft_min, soft_min_grad};
pub use wdl::{
    document_gradient, init_params, reconstruct, wdl_step, wdl_train, wdl_train_with,
    BatchExecutor, DocumentGradient, InitScheme, Sequential, WdlConfig, WdlParams, WdlState,
    WdlTrained,
};
