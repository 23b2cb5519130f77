use std::path::Path;

use serde::Serialize;

use otkit_core::{
    barycenter_grad, build_kernel, solve, solve_log_with_grad, solve_parallel,
    solve_vanilla_with_grad, validate_histogram, wdl_train_with, BarycenterMode, BarycenterProblem,
    CostKernelPair, Histogram, HistogramBatch, Hyper, InitScheme, Matrix, OptimizerKind,
    QuadraticLoss, SinkhornResult, SolveOptions, SolverMode, ValidateOptions, WdlConfig,
};

use crate::config::{
    BaryMode, BarycenterArgs, Command, GradcheckArgs, InitArg, OptimizerArg, RunConfig,
    SinkhornArgs, SinkhornMode, WdlArgs,
};
use crate::csvio::{
    read_matrix_csv, read_vector_csv, write_matrix_csv, write_text, write_vector_csv,
};
use crate::error::{CliError, CliResult};
use crate::exec::RayonExecutor;
use crate::gradcheck::run_gradcheck;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Run(args) => {
            let text =
                std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
            let cfg = RunConfig::from_json(&text).map_err(|source| CliError::Json {
                path: args.config.clone(),
                source,
            })?;
            run_config(cfg)
        }
        Command::Sinkhorn(a) => run_config(RunConfig::Sinkhorn(a)),
        Command::Barycenter(a) => run_config(RunConfig::Barycenter(a)),
        Command::Wdl(a) => run_config(RunConfig::Wdl(a)),
        Command::Gradcheck(a) => run_config(RunConfig::Gradcheck(a)),
    }
}

pub fn run_config(cfg: RunConfig) -> CliResult<()> {
    let save = match &cfg {
        RunConfig::Sinkhorn(a) => a.save_config.clone(),
        RunConfig::Barycenter(a) => a.save_config.clone(),
        RunConfig::Wdl(a) => a.save_config.clone(),
        RunConfig::Gradcheck(a) => a.save_config.clone(),
    };
    if let Some(path) = save {
        write_text(&path, &(cfg.to_json() + "\n"))?;
    }
    match cfg {
        RunConfig::Sinkhorn(a) => cmd_sinkhorn(&a),
        RunConfig::Barycenter(a) => cmd_barycenter(&a),
        RunConfig::Wdl(a) => cmd_wdl(&a),
        RunConfig::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}

fn histogram_options(normalize: bool, log_domain: bool, clamp: bool) -> ValidateOptions {
    ValidateOptions {
        renormalize: normalize,
        strict_positive: log_domain,
        clamp,
    }
}

fn load_kernel(path: &Path, epsilon: f64) -> CliResult<CostKernelPair> {
    let ck = build_kernel(read_matrix_csv(path)?, epsilon)?;
    if ck.underflowed() {
        eprintln!(
            "warning: some kernel entries exp(-C/epsilon) underflow to zero; consider --mode log"
        );
    }
    Ok(ck)
}

fn load_histogram(path: &Path, opts: ValidateOptions) -> CliResult<Histogram> {
    Ok(validate_histogram(read_vector_csv(path)?, opts)?)
}

/// Reads a batch of histograms stored as columns. A single row of the right length is
/// accepted as one histogram.
fn load_batch(path: &Path, bins: usize, opts: ValidateOptions) -> CliResult<HistogramBatch> {
    let mut m = read_matrix_csv(path)?;
    if m.rows() == 1 && m.cols() == bins && bins != 1 {
        m = m.transpose();
    }
    Ok(HistogramBatch::new(m, opts)?)
}

#[derive(Serialize)]
struct SinkhornJson {
    #[serde(rename = "P")]
    plan: Vec<Vec<f64>>,
    u: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
    f: Vec<f64>,
    g: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
    marginal_error: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_a: Option<Vec<f64>>,
}

impl SinkhornJson {
    fn new(res: SinkhornResult, grad_a: Option<Vec<f64>>) -> Self {
        Self {
            plan: res.coupling.plan.to_rows(),
            u: res.state.u,
            v: res.state.v,
            f: res.state.f,
            g: res.state.g,
            loss: res.loss,
            iterations: res.iterations_run,
            converged: res.converged,
            marginal_error: [res.marginal_error.0, res.marginal_error.1],
            grad_a,
        }
    }
}

#[derive(Serialize)]
struct SingleOutput {
    mode: SinkhornMode,
    #[serde(flatten)]
    result: SinkhornJson,
}

#[derive(Serialize)]
struct ParallelOutput {
    mode: SinkhornMode,
    columns: Vec<SinkhornJson>,
}

fn warn_unconverged(converged: bool, iterations: usize) {
    if !converged {
        eprintln!("warning: stopped after {iterations} iterations without reaching the tolerance");
    }
}

pub fn cmd_sinkhorn(args: &SinkhornArgs) -> CliResult<()> {
    let ck = load_kernel(&args.cost, args.epsilon)?;
    let log = args.mode == SinkhornMode::Log;
    let hopts = histogram_options(args.normalize, log, args.clamp_zeros);
    let mode = match args.mode {
        SinkhornMode::Vanilla => SolverMode::Vanilla,
        SinkhornMode::Log => SolverMode::Log,
        SinkhornMode::Parallel => SolverMode::Parallel,
    };
    let opts = SolveOptions {
        max_iters: args.max_iters,
        tolerance: args.tol,
        mode,
        fixed_iters: args.grad,
    };
    opts.validate()?;

    if mode == SolverMode::Parallel {
        if args.grad {
            return Err(CliError::Validation(
                "--grad is available in vanilla and log modes".into(),
            ));
        }
        let (m, n) = ck.shape();
        let a = load_batch(&args.a, m, hopts)?;
        let b = load_batch(&args.b, n, hopts)?;
        let results = solve_parallel(&a, &b, &ck, &opts)?;
        if let Some(r) = results.first() {
            warn_unconverged(r.converged, r.iterations_run);
        }
        let out = ParallelOutput {
            mode: args.mode,
            columns: results
                .into_iter()
                .map(|r| SinkhornJson::new(r, None))
                .collect(),
        };
        return write_json(&args.out, &out);
    }

    let a = load_histogram(&args.a, hopts)?;
    let b = load_histogram(&args.b, hopts)?;
    let (res, grad) = if args.grad {
        let g = match mode {
            SolverMode::Log => solve_log_with_grad(&a, &b, &ck, args.max_iters)?,
            _ => solve_vanilla_with_grad(&a, &b, &ck, args.max_iters)?,
        };
        (g.result, Some(g.grad_a))
    } else {
        (solve(&a, &b, &ck, &opts)?, None)
    };
    if !args.grad {
        warn_unconverged(res.converged, res.iterations_run);
    }
    write_json(
        &args.out,
        &SingleOutput {
            mode: args.mode,
            result: SinkhornJson::new(res, grad),
        },
    )
}

fn bary_mode(m: BaryMode) -> (BarycenterMode, SolverMode) {
    match m {
        BaryMode::Parallel => (BarycenterMode::Parallel, SolverMode::Parallel),
        BaryMode::Log => (BarycenterMode::Log, SolverMode::Log),
    }
}

#[derive(Serialize)]
struct BarycenterGradJson {
    loss: f64,
    iterations: usize,
    barycenter: Vec<f64>,
    grad_atoms: Vec<Vec<f64>>,
    grad_weights: Vec<f64>,
}

pub fn cmd_barycenter(args: &BarycenterArgs) -> CliResult<()> {
    let ck = load_kernel(&args.cost, args.epsilon)?;
    let (mode, solver) = bary_mode(args.mode);
    let log = mode == BarycenterMode::Log;
    let atoms = load_batch(
        &args.atoms,
        ck.shape().0,
        histogram_options(args.normalize, log, args.clamp_zeros),
    )?;
    let weights = load_histogram(
        &args.weights,
        histogram_options(args.normalize, false, false),
    )?;
    let problem = BarycenterProblem::new(&atoms, &weights, &ck)?;

    if args.grad {
        let (Some(target), Some(grad_out)) = (&args.target, &args.grad_out) else {
            return Err(CliError::Validation(
                "--grad needs --target and --grad-out".into(),
            ));
        };
        let target = load_histogram(target, histogram_options(args.normalize, false, false))?;
        let g = barycenter_grad(&problem, &QuadraticLoss::new(target), args.max_iters, mode)?;
        write_vector_csv(&args.out, &g.barycenter)?;
        return write_json(
            grad_out,
            &BarycenterGradJson {
                loss: g.loss,
                iterations: args.max_iters,
                barycenter: g.barycenter,
                grad_atoms: g.grad_atoms.to_rows(),
                grad_weights: g.grad_weights,
            },
        );
    }

    let opts = SolveOptions {
        max_iters: args.max_iters,
        tolerance: args.tol,
        mode: solver,
        fixed_iters: false,
    };
    let (res, _) = otkit_core::barycenter::barycenter(&problem, mode, &opts)?;
    warn_unconverged(res.converged, res.iterations_run);
    write_vector_csv(&args.out, &res.barycenter)
}

pub fn wdl_config(args: &WdlArgs) -> WdlConfig {
    WdlConfig {
        topics: args.topics,
        inner_iters: args.inner_iters,
        mode: bary_mode(args.mode).0,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Adamw => OptimizerKind::AdamW,
        },
        hyper: Hyper {
            lr: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            eps: args.adam_eps,
            weight_decay: args.weight_decay,
        },
        batch_size: args.batch,
        steps: args.steps,
        seed: args.seed,
        init: match args.init {
            InitArg::Zeros => InitScheme::Zeros,
            InitArg::Gaussian => InitScheme::Gaussian {
                sigma: args.init_scale,
            },
        },
        lambda_broadcast: args.lambda_broadcast,
    }
}

pub fn cmd_wdl(args: &WdlArgs) -> CliResult<()> {
    let ck = load_kernel(&args.cost, args.epsilon)?;
    let data = HistogramBatch::new(
        read_matrix_csv(&args.data)?,
        histogram_options(args.normalize, false, false),
    )?;
    let cfg = wdl_config(args);
    let exec = RayonExecutor::from_env()?;
    let trained = wdl_train_with(&data, &ck, &cfg, &exec)?;
    write_matrix_csv(&args.out_atoms, trained.atoms.matrix())?;
    write_matrix_csv(&args.out_weights, trained.weights.matrix())?;
    let losses = Matrix::new(trained.loss_history.len(), 1, trained.loss_history.clone())?;
    write_text(&args.loss_out, &crate::csvio::format_matrix(&losses))
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let (report, reproducer) = run_gradcheck(args)?;
    print!("{}", report.summary());
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if let Some(rep) = reproducer {
        write_json(&args.reproducer, &rep)?;
        eprintln!("reproducer written to {}", args.reproducer.display());
        let worst = report
            .components
            .iter()
            .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
            .expect("at least one component");
        return Err(CliError::Tolerance {
            target: format!("{} {}", report.target, worst.name),
            error: worst.max_error,
            tol: report.tol,
        });
    }
    Ok(())
}
