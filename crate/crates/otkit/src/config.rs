//! Command-line arguments. Every command's argument struct doubles as its JSON run
//! configuration, so `--save-config` followed by `otkit run --config` replays a run.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "otkit", version, about = "Entropic optimal transport toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Solve one entropic transport problem (or a batch in parallel mode).
    Sinkhorn(SinkhornArgs),
    /// Compute an entropic Wasserstein barycenter.
    Barycenter(BarycenterArgs),
    /// Train a Wasserstein dictionary on a corpus of histograms.
    Wdl(WdlArgs),
    /// Compare analytic gradients with finite differences on random instances.
    Gradcheck(GradcheckArgs),
    /// Replay a saved JSON run configuration.
    Run(RunArgs),
}

/// A saved invocation of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Sinkhorn(SinkhornArgs),
    Barycenter(BarycenterArgs),
    Wdl(WdlArgs),
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkhornMode {
    Vanilla,
    Log,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaryMode {
    Parallel,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Sgd,
    Adam,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckTarget {
    SinkhornVanilla,
    SinkhornLog,
    BarycenterParallel,
    BarycenterLog,
    WdlAlpha,
}

impl CheckTarget {
    pub fn name(self) -> &'static str {
        match self {
            CheckTarget::SinkhornVanilla => "sinkhorn-vanilla",
            CheckTarget::SinkhornLog => "sinkhorn-log",
            CheckTarget::BarycenterParallel => "barycenter-parallel",
            CheckTarget::BarycenterLog => "barycenter-log",
            CheckTarget::WdlAlpha => "wdl-alpha",
        }
    }
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iters() -> usize {
    1000
}
fn default_sinkhorn_mode() -> SinkhornMode {
    SinkhornMode::Vanilla
}
fn default_bary_mode() -> BaryMode {
    BaryMode::Parallel
}
fn default_inner_iters() -> usize {
    50
}
fn default_optimizer() -> OptimizerArg {
    OptimizerArg::Adam
}
fn default_lr() -> f64 {
    0.05
}
fn default_batch() -> usize {
    8
}
fn default_steps() -> usize {
    100
}
fn default_init() -> InitArg {
    InitArg::Zeros
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_h() -> f64 {
    1e-6
}
fn default_check_tol() -> f64 {
    1e-4
}
fn default_trials() -> usize {
    20
}
fn default_check_epsilon() -> f64 {
    0.5
}
fn default_check_iters() -> usize {
    100
}
fn default_dims() -> Dims {
    Dims { m: 6, n: 6, s: 2 }
}
fn default_reproducer() -> PathBuf {
    PathBuf::from("gradcheck-reproducer.json")
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SinkhornArgs {
    /// Source histogram (column CSV); an M×S matrix in parallel mode.
    #[arg(long)]
    pub a: PathBuf,
    /// Target histogram (column CSV); an N×S matrix in parallel mode.
    #[arg(long)]
    pub b: PathBuf,
    /// M×N ground cost.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = SinkhornMode::Vanilla)]
    #[serde(default = "default_sinkhorn_mode")]
    pub mode: SinkhornMode,
    #[arg(long, default_value_t = 1e-9)]
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Also report the gradient of the loss w.r.t. `a`; runs exactly `max-iters` iterations.
    #[arg(long)]
    #[serde(default)]
    pub grad: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Rescale inputs whose mass differs from one.
    #[arg(long)]
    #[serde(default)]
    pub normalize: bool,
    /// In log mode, lift zero entries to a tiny floor instead of failing.
    #[arg(long)]
    #[serde(default)]
    pub clamp_zeros: bool,
    /// Write this invocation as a JSON run configuration.
    #[arg(long)]
    #[serde(skip)]
    pub save_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BarycenterArgs {
    /// M×S matrix whose columns are the atoms.
    #[arg(long)]
    pub atoms: PathBuf,
    /// Length-S barycentric weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// M×N ground cost.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = BaryMode::Parallel)]
    #[serde(default = "default_bary_mode")]
    pub mode: BaryMode,
    #[arg(long, default_value_t = 1e-9)]
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Barycenter output (column CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Differentiate `‖b − target‖²`; runs exactly `max-iters` iterations.
    #[arg(long, requires_all = ["target", "grad_out"])]
    #[serde(default)]
    pub grad: bool,
    #[arg(long)]
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub grad_out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub normalize: bool,
    #[arg(long)]
    #[serde(default)]
    pub clamp_zeros: bool,
    #[arg(long)]
    #[serde(skip)]
    pub save_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WdlArgs {
    /// N×M matrix whose columns are the documents.
    #[arg(long)]
    pub data: PathBuf,
    /// N×N ground cost.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub topics: usize,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50)]
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
    #[arg(long, value_enum, default_value_t = BaryMode::Parallel)]
    #[serde(default = "default_bary_mode")]
    pub mode: BaryMode,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.05)]
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Zeros)]
    #[serde(default = "default_init")]
    pub init: InitArg,
    /// Standard deviation of the gaussian initialization.
    #[arg(long, default_value_t = 0.1)]
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0.9)]
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// AdamW decoupled weight decay.
    #[arg(long, default_value_t = 0.01)]
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Apply the batch-mean weight gradient to every document.
    #[arg(long)]
    #[serde(default)]
    pub lambda_broadcast: bool,
    #[arg(long)]
    pub out_atoms: PathBuf,
    #[arg(long)]
    pub out_weights: PathBuf,
    #[arg(long)]
    pub loss_out: PathBuf,
    #[arg(long)]
    #[serde(default)]
    pub normalize: bool,
    #[arg(long)]
    #[serde(skip)]
    pub save_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub which: CheckTarget,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    #[serde(default = "default_h")]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    #[serde(default = "default_check_tol")]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    #[serde(default = "default_check_epsilon")]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    #[serde(default = "default_check_iters")]
    pub iters: usize,
    /// Upper bounds on the instance sizes, `MxNxS`.
    #[arg(long, default_value = "6x6x2")]
    #[serde(default = "default_dims")]
    pub dims: Dims,
    /// Optional JSON report.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Where the worst instance is written when the check fails.
    #[arg(long, default_value = "gradcheck-reproducer.json")]
    #[serde(default = "default_reproducer")]
    pub reproducer: PathBuf,
    /// Perturb the analytic gradient; used to test the harness itself.
    #[arg(long, hide = true)]
    #[serde(default)]
    pub corrupt: bool,
    #[arg(long)]
    #[serde(skip)]
    pub save_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Instance size bounds for the gradient checker.
///
/// For the Sinkhorn targets `m`, `n` bound the marginal lengths; for barycenters `m`
/// bounds the atom length, `n` the barycenter length and `s` the atom count; for
/// `wdl-alpha` they are bins, documents and topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| format!("bad dimension {p:?} in {s:?}"))
        };
        match parts.as_slice() {
            [m, n] => Ok(Dims {
                m: parse(m)?,
                n: parse(n)?,
                s: 1,
            }),
            [m, n, k] => Ok(Dims {
                m: parse(m)?,
                n: parse(n)?,
                s: parse(k)?,
            }),
            _ => Err(format!("expected MxNxS, got {s:?}")),
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.s)
    }
}

impl TryFrom<String> for Dims {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Dims> for String {
    fn from(d: Dims) -> String {
        d.to_string()
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run configs are always serializable")
    }
}
