//! Finite-difference verification of the analytic gradients.
//!
//! Inputs that live on a simplex are perturbed along the tangent directions
//! `d_i = e_i − 1/n`, so every perturbed point is still a histogram. The central
//! difference along `d_i` estimates `g_i − mean(g)`; the analytic gradient is centered
//! the same way before comparison. Logits (`wdl-alpha`) are perturbed entry by entry.
//!
//! The error of a trial is `‖analytic − fd‖∞ / max(‖fd‖∞, ‖analytic‖∞, 1e-10)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use otkit_core::barycenter::barycenter;
use otkit_core::error::Result;
use otkit_core::sinkhorn::solve;
use otkit_core::wdl::document_gradient;
use otkit_core::{
    barycenter_grad, build_kernel, softmax_mat, solve_log_with_grad, solve_vanilla_with_grad,
    BarycenterMode, BarycenterProblem, CostKernelPair, Histogram, HistogramBatch, Matrix,
    QuadraticLoss, SolveOptions, SolverMode, ValidateOptions,
};

use crate::config::{CheckTarget, Dims, GradcheckArgs};
use crate::error::{CliError, CliResult};

const DENOM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornInstance {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub cost: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycenterInstance {
    /// Rows of the M×S atom matrix.
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub target: Vec<f64>,
    pub cost: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdlInstance {
    /// Rows of the N×S atom logits.
    pub alpha: Vec<Vec<f64>>,
    /// Rows of the S×M weight logits.
    pub lambda: Vec<Vec<f64>>,
    /// Rows of the N×M document matrix.
    pub data: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Instance {
    Sinkhorn(SinkhornInstance),
    Barycenter(BarycenterInstance),
    Wdl(WdlInstance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub name: String,
    pub max_error: f64,
    pub worst_trial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub target: String,
    pub trials: usize,
    pub h: f64,
    pub tol: f64,
    pub components: Vec<ComponentReport>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.max_error)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducer {
    pub target: String,
    pub seed: u64,
    pub trial: usize,
    pub h: f64,
    pub component: String,
    pub error: f64,
    pub instance: Instance,
}

/// Relative ∞-norm discrepancy between two gradient estimates.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let num = analytic
        .iter()
        .zip(fd)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(fd)
        .map(|x| x.abs())
        .fold(DENOM_FLOOR, f64::max);
    num / scale
}

pub fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Entries drawn from `[0.5, 1.5)` then normalized, so no bin is tiny.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Squared distances between random points of `[0, 1]`, scaled by two.
fn random_cost(rng: &mut ChaCha8Rng, m: usize, n: usize, shared: bool) -> Vec<Vec<f64>> {
    let x: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
    let y: Vec<f64> = if shared {
        x.clone()
    } else {
        (0..n).map(|_| rng.gen()).collect()
    };
    x.iter()
        .map(|xi| y.iter().map(|yj| 2.0 * (xi - yj) * (xi - yj)).collect())
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, bound: usize) -> usize {
    rng.gen_range(bound.min(2)..=bound)
}

pub fn sinkhorn_instances(
    seed: u64,
    trials: usize,
    dims: Dims,
    epsilon: f64,
    iters: usize,
) -> Vec<SinkhornInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let m = draw(&mut rng, dims.m);
            let n = draw(&mut rng, dims.n);
            SinkhornInstance {
                a: random_simplex(&mut rng, m),
                b: random_simplex(&mut rng, n),
                cost: random_cost(&mut rng, m, n, false),
                epsilon,
                iters,
            }
        })
        .collect()
}

pub fn barycenter_instances(
    seed: u64,
    trials: usize,
    dims: Dims,
    epsilon: f64,
    iters: usize,
) -> Vec<BarycenterInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let m = draw(&mut rng, dims.m);
            let n = if dims.m == dims.n {
                m
            } else {
                draw(&mut rng, dims.n)
            };
            let s = draw(&mut rng, dims.s);
            let cols: Vec<Vec<f64>> = (0..s).map(|_| random_simplex(&mut rng, m)).collect();
            let atoms = (0..m)
                .map(|i| cols.iter().map(|c| c[i]).collect())
                .collect();
            BarycenterInstance {
                atoms,
                weights: random_simplex(&mut rng, s),
                target: random_simplex(&mut rng, n),
                cost: random_cost(&mut rng, m, n, m == n),
                epsilon,
                iters,
            }
        })
        .collect()
}

pub fn wdl_instances(
    seed: u64,
    trials: usize,
    dims: Dims,
    epsilon: f64,
    iters: usize,
) -> Vec<WdlInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = |rng: &mut ChaCha8Rng, r: usize, c: usize| -> Vec<Vec<f64>> {
        (0..r)
            .map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    (0..trials)
        .map(|_| {
            let n = draw(&mut rng, dims.m);
            let docs = draw(&mut rng, dims.n);
            let s = draw(&mut rng, dims.s);
            let alpha = logits(&mut rng, n, s);
            let lambda = logits(&mut rng, s, docs);
            let cols: Vec<Vec<f64>> = (0..docs).map(|_| random_simplex(&mut rng, n)).collect();
            let data = (0..n)
                .map(|i| cols.iter().map(|c| c[i]).collect())
                .collect();
            WdlInstance {
                alpha,
                lambda,
                data,
                cost: random_cost(&mut rng, n, n, true),
                epsilon,
                iters,
            }
        })
        .collect()
}

fn kernel(cost: &[Vec<f64>], epsilon: f64) -> Result<CostKernelPair> {
    build_kernel(Matrix::from_rows(cost)?, epsilon)
}

fn sinkhorn_mode(target: CheckTarget) -> SolverMode {
    match target {
        CheckTarget::SinkhornLog => SolverMode::Log,
        _ => SolverMode::Vanilla,
    }
}

fn bary_mode(target: CheckTarget) -> BarycenterMode {
    match target {
        CheckTarget::BarycenterLog => BarycenterMode::Log,
        _ => BarycenterMode::Parallel,
    }
}

/// Unprojected analytic `∂loss/∂a`.
pub fn sinkhorn_analytic(inst: &SinkhornInstance, mode: SolverMode) -> Result<Vec<f64>> {
    let ck = kernel(&inst.cost, inst.epsilon)?;
    let a = Histogram::new(inst.a.clone())?;
    let b = Histogram::new(inst.b.clone())?;
    let g = match mode {
        SolverMode::Log => solve_log_with_grad(&a, &b, &ck, inst.iters)?,
        _ => solve_vanilla_with_grad(&a, &b, &ck, inst.iters)?,
    };
    Ok(g.grad_a)
}

fn sinkhorn_loss(
    a: &[f64],
    inst: &SinkhornInstance,
    ck: &CostKernelPair,
    mode: SolverMode,
) -> Result<f64> {
    let a = Histogram::new(a.to_vec())?;
    let b = Histogram::new(inst.b.clone())?;
    Ok(solve(&a, &b, ck, &SolveOptions::fixed(inst.iters, mode))?.loss)
}

/// Central differences along `e_i − 1/n` of a function of a histogram.
fn tangent_fd(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let step = |sign: f64| -> Vec<f64> {
            x.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let d = if k == i { 1.0 } else { 0.0 } - 1.0 / n as f64;
                    v + sign * h * d
                })
                .collect()
        };
        let plus = f(&step(1.0))?;
        let minus = f(&step(-1.0))?;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

pub fn sinkhorn_fd(inst: &SinkhornInstance, mode: SolverMode, h: f64) -> Result<Vec<f64>> {
    let ck = kernel(&inst.cost, inst.epsilon)?;
    tangent_fd(&inst.a, h, |a| sinkhorn_loss(a, inst, &ck, mode))
}

pub struct BarycenterGrads {
    pub atoms: Matrix,
    pub weights: Vec<f64>,
}

fn batch(rows: &[Vec<f64>]) -> Result<HistogramBatch> {
    HistogramBatch::new(Matrix::from_rows(rows)?, ValidateOptions::default())
}

pub fn barycenter_analytic(
    inst: &BarycenterInstance,
    mode: BarycenterMode,
) -> Result<BarycenterGrads> {
    let ck = kernel(&inst.cost, inst.epsilon)?;
    let atoms = batch(&inst.atoms)?;
    let w = Histogram::new(inst.weights.clone())?;
    let problem = BarycenterProblem::new(&atoms, &w, &ck)?;
    let loss = QuadraticLoss::new(Histogram::new(inst.target.clone())?);
    let g = barycenter_grad(&problem, &loss, inst.iters, mode)?;
    Ok(BarycenterGrads {
        atoms: g.grad_atoms,
        weights: g.grad_weights,
    })
}

fn barycenter_loss(
    atoms: &HistogramBatch,
    w: &[f64],
    inst: &BarycenterInstance,
    ck: &CostKernelPair,
    mode: BarycenterMode,
) -> Result<f64> {
    let w = Histogram::new(w.to_vec())?;
    let problem = BarycenterProblem::new(atoms, &w, ck)?;
    let solver = match mode {
        BarycenterMode::Parallel => SolverMode::Parallel,
        BarycenterMode::Log => SolverMode::Log,
    };
    let (res, _) = barycenter(&problem, mode, &SolveOptions::fixed(inst.iters, solver))?;
    Ok(QuadraticLoss::new(Histogram::new(inst.target.clone())?).value(&res.barycenter))
}

/// Tangent finite differences for every atom column and for the weights.
pub fn barycenter_fd(
    inst: &BarycenterInstance,
    mode: BarycenterMode,
    h: f64,
) -> Result<BarycenterGrads> {
    let ck = kernel(&inst.cost, inst.epsilon)?;
    let base = Matrix::from_rows(&inst.atoms)?;
    let (m, s) = base.shape();
    let mut grad_atoms = Matrix::zeros(m, s);
    for col in 0..s {
        let fd = tangent_fd(&base.column(col), h, |c| {
            let mut moved = base.clone();
            moved.set_column(col, c);
            let atoms = HistogramBatch::new(moved, ValidateOptions::default())?;
            barycenter_loss(&atoms, &inst.weights, inst, &ck, mode)
        })?;
        grad_atoms.set_column(col, &fd);
    }
    let atoms = HistogramBatch::new(base, ValidateOptions::default())?;
    let weights = tangent_fd(&inst.weights, h, |w| {
        barycenter_loss(&atoms, w, inst, &ck, mode)
    })?;
    Ok(BarycenterGrads {
        atoms: grad_atoms,
        weights,
    })
}

fn center_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for j in 0..m.cols() {
        out.set_column(j, &centered(&m.column(j)));
    }
    out
}

/// Mean loss over all documents as a function of the atom logits.
fn wdl_loss(alpha: &Matrix, inst: &WdlInstance, ck: &CostKernelPair) -> Result<f64> {
    let atoms = softmax_mat(alpha)?;
    let lambda = Matrix::from_rows(&inst.lambda)?;
    let weights = softmax_mat(&lambda)?;
    let data = batch(&inst.data)?;
    let docs = data.count();
    let opts = SolveOptions::fixed(inst.iters, SolverMode::Parallel);
    let mut total = 0.0;
    for m in 0..docs {
        let w = weights.histogram(m);
        let problem = BarycenterProblem::new(&atoms, &w, ck)?;
        let (res, _) = barycenter(&problem, BarycenterMode::Parallel, &opts)?;
        total += QuadraticLoss::new(data.histogram(m)).value(&res.barycenter);
    }
    Ok(total / docs as f64)
}

pub fn wdl_alpha_analytic(inst: &WdlInstance) -> Result<Matrix> {
    let ck = kernel(&inst.cost, inst.epsilon)?;
    let atoms = softmax_mat(&Matrix::from_rows(&inst.alpha)?)?;
    let lambda = Matrix::from_rows(&inst.lambda)?;
    let data = batch(&inst.data)?;
    let docs = data.count();
    let (n, s) = atoms.matrix().shape();
    let mut acc = Matrix::zeros(n, s);
    for m in 0..docs {
        let g = document_gradient(
            &atoms,
            &lambda.column(m),
            &data,
            m,
            &ck,
            inst.iters,
            BarycenterMode::Parallel,
        )?;
        acc = acc.zip_map(&g.grad_alpha, |x, y| x + y);
    }
    Ok(acc.map(|x| x / docs as f64))
}

pub fn wdl_alpha_fd(inst: &WdlInstance, h: f64) -> Result<Matrix> {
    let ck = kernel(&inst.cost, inst.epsilon)?;
    let alpha = Matrix::from_rows(&inst.alpha)?;
    let mut out = Matrix::zeros(alpha.rows(), alpha.cols());
    for i in 0..alpha.rows() {
        for j in 0..alpha.cols() {
            let mut plus = alpha.clone();
            plus.set(i, j, alpha.get(i, j) + h);
            let mut minus = alpha.clone();
            minus.set(i, j, alpha.get(i, j) - h);
            let d = (wdl_loss(&plus, inst, &ck)? - wdl_loss(&minus, inst, &ck)?) / (2.0 * h);
            out.set(i, j, d);
        }
    }
    Ok(out)
}

fn corrupt(x: &mut [f64]) {
    if let Some(first) = x.first_mut() {
        *first = *first * 1.01 + 1e-3;
    }
}

struct Tally {
    name: &'static str,
    max_error: f64,
    worst_trial: usize,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            max_error: 0.0,
            worst_trial: 0,
        }
    }

    /// Returns true when `err` is the new worst value.
    fn record(&mut self, trial: usize, err: f64) -> bool {
        if err > self.max_error || err.is_nan() {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst_trial = trial;
            return true;
        }
        false
    }
}

fn validate(args: &GradcheckArgs) -> CliResult<()> {
    let positive = |x: f64| x > 0.0;
    if !positive(args.h) || !positive(args.tol) || !positive(args.epsilon) {
        return Err(CliError::Validation(
            "h, tol and epsilon must be positive".into(),
        ));
    }
    if args.trials == 0 || args.iters == 0 {
        return Err(CliError::Validation(
            "trials and iters must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Runs all trials. The reproducer describes the worst trial of the worst component and
/// is only returned when the check fails.
pub fn run_gradcheck(args: &GradcheckArgs) -> CliResult<(GradcheckReport, Option<Reproducer>)> {
    validate(args)?;
    let (h, target) = (args.h, args.which);
    let mut tallies: Vec<Tally> = Vec::new();
    let mut worst: Option<(f64, String, usize, Instance)> = None;
    let mut note = |name: &str, trial: usize, err: f64, inst: &Instance| {
        let bad = if err.is_nan() { f64::INFINITY } else { err };
        if worst.as_ref().is_none_or(|w| bad > w.0) {
            worst = Some((bad, name.to_string(), trial, inst.clone()));
        }
    };

    match target {
        CheckTarget::SinkhornVanilla | CheckTarget::SinkhornLog => {
            let mode = sinkhorn_mode(target);
            let mut t = Tally::new("grad_a");
            for (trial, inst) in
                sinkhorn_instances(args.seed, args.trials, args.dims, args.epsilon, args.iters)
                    .into_iter()
                    .enumerate()
            {
                let mut an = sinkhorn_analytic(&inst, mode)?;
                if args.corrupt {
                    corrupt(&mut an);
                }
                let fd = sinkhorn_fd(&inst, mode, h)?;
                let err = relative_error(&centered(&an), &fd);
                if t.record(trial, err) {
                    note(t.name, trial, err, &Instance::Sinkhorn(inst));
                }
            }
            tallies.push(t);
        }
        CheckTarget::BarycenterParallel | CheckTarget::BarycenterLog => {
            let mode = bary_mode(target);
            let mut ta = Tally::new("grad_atoms");
            let mut tw = Tally::new("grad_weights");
            for (trial, inst) in
                barycenter_instances(args.seed, args.trials, args.dims, args.epsilon, args.iters)
                    .into_iter()
                    .enumerate()
            {
                let mut an = barycenter_analytic(&inst, mode)?;
                if args.corrupt {
                    corrupt(an.atoms.as_mut_slice());
                    corrupt(&mut an.weights);
                }
                let fd = barycenter_fd(&inst, mode, h)?;
                let ea = relative_error(center_columns(&an.atoms).as_slice(), fd.atoms.as_slice());
                let ew = relative_error(&centered(&an.weights), &fd.weights);
                let wrapped = Instance::Barycenter(inst);
                if ta.record(trial, ea) {
                    note(ta.name, trial, ea, &wrapped);
                }
                if tw.record(trial, ew) {
                    note(tw.name, trial, ew, &wrapped);
                }
            }
            tallies.push(ta);
            tallies.push(tw);
        }
        CheckTarget::WdlAlpha => {
            let mut t = Tally::new("grad_alpha");
            for (trial, inst) in
                wdl_instances(args.seed, args.trials, args.dims, args.epsilon, args.iters)
                    .into_iter()
                    .enumerate()
            {
                let mut an = wdl_alpha_analytic(&inst)?;
                if args.corrupt {
                    corrupt(an.as_mut_slice());
                }
                let fd = wdl_alpha_fd(&inst, h)?;
                let err = relative_error(an.as_slice(), fd.as_slice());
                if t.record(trial, err) {
                    note(t.name, trial, err, &Instance::Wdl(inst));
                }
            }
            tallies.push(t);
        }
    }

    let passed = tallies.iter().all(|t| t.max_error <= args.tol);
    let report = GradcheckReport {
        target: target.name().to_string(),
        trials: args.trials,
        h,
        tol: args.tol,
        components: tallies
            .iter()
            .map(|t| ComponentReport {
                name: t.name.to_string(),
                max_error: t.max_error,
                worst_trial: t.worst_trial,
            })
            .collect(),
        passed,
    };
    let reproducer = match (passed, worst) {
        (false, Some((error, component, trial, instance))) => Some(Reproducer {
            target: target.name().to_string(),
            seed: args.seed,
            trial,
            h,
            component,
            error,
            instance,
        }),
        _ => None,
    };
    Ok((report, reproducer))
}

impl GradcheckReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "{} {} max_rel_error={:.3e} worst_trial={} tol={:.1e} {}\n",
                self.target,
                c.name,
                c.max_error,
                c.worst_trial,
                self.tol,
                if c.max_error <= self.tol {
                    "ok"
                } else {
                    "FAIL"
                }
            ));
        }
        out
    }
}
