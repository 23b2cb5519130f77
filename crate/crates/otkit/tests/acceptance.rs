//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p otkit --test acceptance`.

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otkit::config::{CheckTarget, Dims, GradcheckArgs};
use otkit::gradcheck::{
    barycenter_analytic, barycenter_instances, centered, relative_error, run_gradcheck,
    sinkhorn_analytic, sinkhorn_instances,
};
use otkit_core::optim::{adam_step, adamw_step, sgd_step};
use otkit_core::simplex::{softmax_jacobian_vec, softmax_vec};
use otkit_core::softmin::{soft_min, soft_min_grad};
use otkit_core::{
    barycenter, build_kernel, diag_scale, entropic_loss, reconstruct, solve_log, solve_parallel,
    solve_vanilla, wdl_train, BarycenterMode, BarycenterProblem, Error, Histogram, HistogramBatch,
    Hyper, InitScheme, Matrix, OptimizerKind, OptimizerState, SolveOptions, SolverMode,
    ValidateOptions, WdlConfig,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn sq_dist_cost(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    let x: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    Matrix::from_fn(m, n, |i, j| (x[i] - y[j]).powi(2))
}

fn inf_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// 1 ---------------------------------------------------------------------------

fn two_by_two_loss(p: f64, eps: f64) -> f64 {
    let plan = Matrix::from_rows(&[[p, 0.5 - p], [0.5 - p, p]]).unwrap();
    let c = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
    entropic_loss(&plan, &c, eps).unwrap()
}

fn criterion_1() -> Outcome {
    let c = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let h = Histogram::uniform(2);
    let points = 10_000;
    let spacing = 0.5 / points as f64;
    let mut worst_closed = 0.0f64;
    let mut worst_grid = 0.0f64;
    for eps in [1.0, 0.5, 0.2] {
        let ck = build_kernel(c.clone(), eps).unwrap();
        let closed = 0.5 / (1.0 + (-1.0 / eps).exp());
        // grid over the open segment p ∈ (0, 1/2)
        let (mut best_p, mut best_l) = (0.0, f64::INFINITY);
        for k in 0..points {
            let p = (k as f64 + 0.5) * spacing;
            let l = two_by_two_loss(p, eps);
            if l < best_l {
                best_p = p;
                best_l = l;
            }
        }
        for res in [
            solve_vanilla(&h, &h, &ck, &SolveOptions::default()).map_err(|e| e.to_string())?,
            solve_log(&h, &h, &ck, &SolveOptions::default()).map_err(|e| e.to_string())?,
        ] {
            let p11 = res.coupling.plan.get(0, 0);
            worst_closed = worst_closed.max((p11 - closed).abs());
            worst_grid = worst_grid.max((p11 - best_p).abs());
            if (res.loss - best_l) > 1e-8 || (closed - best_p).abs() > spacing {
                return Err(format!("eps={eps}: grid oracle disagrees"));
            }
        }
    }
    check(
        worst_closed <= 1e-6 && worst_grid <= spacing,
        format!("|P11-closed|={worst_closed:.1e} (tol 1e-6), |P11-grid|={worst_grid:.1e} (grid step {spacing:.0e})"),
    )
}

// 2 and 3 ---------------------------------------------------------------------

struct Instance {
    a: Histogram,
    b: Histogram,
    ck: otkit_core::CostKernelPair,
}

fn random_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..50)
        .map(|_| {
            let m = rng.gen_range(1..=20);
            let n = rng.gen_range(1..=20);
            let eps = rng.gen_range(0.05..=1.0);
            Instance {
                a: Histogram::new(dirichlet(&mut rng, m)).unwrap(),
                b: Histogram::new(dirichlet(&mut rng, n)).unwrap(),
                ck: build_kernel(sq_dist_cost(&mut rng, m, n), eps).unwrap(),
            }
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let opts = SolveOptions {
        tolerance: 1e-9,
        ..SolveOptions::default()
    };
    let mut worst = 0.0f64;
    for (k, inst) in random_instances().iter().enumerate() {
        for solver in [solve_vanilla, solve_log] {
            let res =
                solver(&inst.a, &inst.b, &inst.ck, &opts).map_err(|e| format!("#{k}: {e}"))?;
            let (r, c) = res.coupling.marginal_violation();
            worst = worst.max(r).max(c);
        }
    }
    check(
        worst <= 1e-8,
        format!("max marginal violation {worst:.2e} (tol 1e-8)"),
    )
}

fn criterion_3() -> Outcome {
    let opts = SolveOptions::default();
    let mut worst_vl = 0.0f64;
    for (k, inst) in random_instances().iter().enumerate() {
        let pv =
            solve_vanilla(&inst.a, &inst.b, &inst.ck, &opts).map_err(|e| format!("#{k}: {e}"))?;
        let pl = solve_log(&inst.a, &inst.b, &inst.ck, &opts).map_err(|e| format!("#{k}: {e}"))?;
        worst_vl = worst_vl.max(pv.coupling.plan.max_abs_diff(&pl.coupling.plan));
    }

    // Parallel batches against per-column vanilla runs of the same iteration count.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_par = 0.0f64;
    for _ in 0..10 {
        let (m, n, s) = (
            rng.gen_range(2..=15),
            rng.gen_range(2..=15),
            rng.gen_range(1..=4),
        );
        let eps = rng.gen_range(0.05..=1.0);
        let ck = build_kernel(sq_dist_cost(&mut rng, m, n), eps).unwrap();
        let acols: Vec<Vec<f64>> = (0..s).map(|_| dirichlet(&mut rng, m)).collect();
        let bcols: Vec<Vec<f64>> = (0..s).map(|_| dirichlet(&mut rng, n)).collect();
        let a = HistogramBatch::new(
            Matrix::from_columns(&acols).unwrap(),
            ValidateOptions::default(),
        )
        .unwrap();
        let b = HistogramBatch::new(
            Matrix::from_columns(&bcols).unwrap(),
            ValidateOptions::default(),
        )
        .unwrap();
        let par = solve_parallel(&a, &b, &ck, &opts).map_err(|e| e.to_string())?;
        for (col, res) in par.iter().enumerate() {
            let fixed = SolveOptions::fixed(res.iterations_run, SolverMode::Vanilla);
            let single = solve_vanilla(&a.histogram(col), &b.histogram(col), &ck, &fixed)
                .map_err(|e| e.to_string())?;
            worst_par = worst_par.max(single.coupling.plan.max_abs_diff(&res.coupling.plan));
        }
    }
    check(
        worst_vl <= 1e-6 && worst_par <= 1e-10,
        format!("vanilla vs log {worst_vl:.1e} (tol 1e-6), parallel vs per-column {worst_par:.1e} (tol 1e-10)"),
    )
}

// 4 ---------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut overflow = 0;
    let trials = 10;
    for t in 0..trials {
        let x: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let c = Matrix::from_fn(8, 8, |i, j| 10.0 * (x[i] - x[j]).abs());
        let ck = build_kernel(c, 1e-3).unwrap();
        let a = Histogram::new(dirichlet(&mut rng, 8)).unwrap();
        let b = Histogram::new(dirichlet(&mut rng, 8)).unwrap();
        let log = solve_log(&a, &b, &ck, &SolveOptions::default())
            .map_err(|e| format!("trial {t}: log mode failed: {e}"))?;
        if !log.coupling.plan.is_finite() {
            return Err(format!("trial {t}: log-mode plan not finite"));
        }
        match solve_vanilla(&a, &b, &ck, &SolveOptions::default()) {
            Err(Error::NumericOverflow { .. }) => overflow += 1,
            other => {
                return Err(format!(
                    "trial {t}: vanilla mode returned {:?} instead of NumericOverflow",
                    other.map(|r| r.iterations_run)
                ))
            }
        }
    }
    check(
        overflow == trials,
        format!("{trials}/{trials} instances: log finite, vanilla NumericOverflow"),
    )
}

// 5 and 6 ---------------------------------------------------------------------

fn gradcheck_args(which: CheckTarget, dims: Dims, eps: f64, iters: usize) -> GradcheckArgs {
    GradcheckArgs {
        which,
        h: 1e-6,
        tol: 1e-4,
        trials: 20,
        seed: 5,
        epsilon: eps,
        iters,
        dims,
        out: None,
        reproducer: std::env::temp_dir().join("otkit-acceptance-reproducer.json"),
        corrupt: false,
        save_config: None,
    }
}

fn criterion_5() -> Outcome {
    let dims = Dims { m: 10, n: 10, s: 1 };
    let mut worst = 0.0f64;
    for which in [CheckTarget::SinkhornVanilla, CheckTarget::SinkhornLog] {
        let (report, _) =
            run_gradcheck(&gradcheck_args(which, dims, 0.3, 100)).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_error());
    }
    let mut cross = 0.0f64;
    for inst in sinkhorn_instances(5, 20, dims, 0.3, 100) {
        let gv = sinkhorn_analytic(&inst, SolverMode::Vanilla).map_err(|e| e.to_string())?;
        let gl = sinkhorn_analytic(&inst, SolverMode::Log).map_err(|e| e.to_string())?;
        cross = cross.max(relative_error(&centered(&gv), &centered(&gl)));
    }
    check(
        worst <= 1e-4 && cross <= 1e-5,
        format!("max FD rel error {worst:.1e} (tol 1e-4), vanilla vs log {cross:.1e} (tol 1e-5)"),
    )
}

fn criterion_6() -> Outcome {
    let dims = Dims { m: 8, n: 8, s: 3 };
    let mut worst = 0.0f64;
    for which in [CheckTarget::BarycenterParallel, CheckTarget::BarycenterLog] {
        let (report, _) =
            run_gradcheck(&gradcheck_args(which, dims, 0.3, 60)).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_error());
    }
    let mut cross = 0.0f64;
    for inst in barycenter_instances(5, 20, dims, 0.3, 60) {
        let gp = barycenter_analytic(&inst, BarycenterMode::Parallel).map_err(|e| e.to_string())?;
        let gl = barycenter_analytic(&inst, BarycenterMode::Log).map_err(|e| e.to_string())?;
        cross = cross.max(relative_error(gp.atoms.as_slice(), gl.atoms.as_slice()));
        cross = cross.max(relative_error(
            &centered(&gp.weights),
            &centered(&gl.weights),
        ));
    }
    check(
        worst <= 1e-4 && cross <= 1e-5,
        format!("max FD rel error {worst:.1e} (tol 1e-4), parallel vs log {cross:.1e} (tol 1e-5)"),
    )
}

// 7 ---------------------------------------------------------------------------

fn bary(
    atoms: &HistogramBatch,
    w: &Histogram,
    ck: &otkit_core::CostKernelPair,
    mode: BarycenterMode,
    opts: &SolveOptions,
) -> Result<Vec<f64>, Error> {
    let p = BarycenterProblem::new(atoms, w, ck)?;
    Ok(barycenter(&p, mode, opts)?.0.barycenter)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut collapse, mut onehot, mut uniform, mut mass, mut perm) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let conv = SolveOptions::default();
    let fixed = |mode| {
        SolveOptions::fixed(
            200,
            match mode {
                BarycenterMode::Parallel => SolverMode::Parallel,
                BarycenterMode::Log => SolverMode::Log,
            },
        )
    };
    for _ in 0..10 {
        let (m, n, s) = (
            rng.gen_range(2..=8),
            rng.gen_range(2..=8),
            rng.gen_range(2..=4),
        );
        let ck = build_kernel(sq_dist_cost(&mut rng, m, n), rng.gen_range(0.1..=1.0)).unwrap();
        let cols: Vec<Vec<f64>> = (0..s).map(|_| dirichlet(&mut rng, m)).collect();
        let atoms = HistogramBatch::new(
            Matrix::from_columns(&cols).unwrap(),
            ValidateOptions::default(),
        )
        .unwrap();
        let w = Histogram::new(dirichlet(&mut rng, s)).unwrap();
        for mode in [BarycenterMode::Parallel, BarycenterMode::Log] {
            let e = |e: Error| e.to_string();
            // identical atoms collapse to the single-atom barycenter
            let same = HistogramBatch::new(
                Matrix::from_columns(&vec![cols[0].clone(); s]).unwrap(),
                ValidateOptions::default(),
            )
            .unwrap();
            let single = HistogramBatch::new(
                Matrix::from_columns(&[cols[0].clone()]).unwrap(),
                ValidateOptions::default(),
            )
            .unwrap();
            let b_same = bary(&same, &w, &ck, mode, &conv).map_err(e)?;
            let b_single = bary(&single, &Histogram::uniform(1), &ck, mode, &conv).map_err(e)?;
            collapse = collapse.max(inf_norm_diff(&b_same, &b_single));

            // one-hot weights select one atom (parallel mode only admits zero weights
            // and log mode treats them identically)
            let k = rng.gen_range(0..s);
            let mut hot = vec![0.0; s];
            hot[k] = 1.0;
            let b_hot = bary(&atoms, &Histogram::new(hot).unwrap(), &ck, mode, &conv).map_err(e)?;
            let only = HistogramBatch::new(
                Matrix::from_columns(&[cols[k].clone()]).unwrap(),
                ValidateOptions::default(),
            )
            .unwrap();
            let b_only = bary(&only, &Histogram::uniform(1), &ck, mode, &conv).map_err(e)?;
            onehot = onehot.max(inf_norm_diff(&b_hot, &b_only));

            // zero cost gives the uniform histogram
            let zero = build_kernel(Matrix::zeros(m, n), ck.epsilon()).unwrap();
            let b0 = bary(&atoms, &w, &zero, mode, &conv).map_err(e)?;
            uniform = uniform.max(
                b0.iter()
                    .map(|x| (x - 1.0 / n as f64).abs())
                    .fold(0.0, f64::max),
            );

            // converged barycenters carry unit mass
            let b = bary(&atoms, &w, &ck, mode, &conv).map_err(e)?;
            mass = mass.max((b.iter().sum::<f64>() - 1.0).abs());

            // permuting atoms together with weights leaves b unchanged
            let order: Vec<usize> = (0..s).rev().collect();
            let pcols: Vec<Vec<f64>> = order.iter().map(|&i| cols[i].clone()).collect();
            let pw: Vec<f64> = order.iter().map(|&i| w.values()[i]).collect();
            let patoms = HistogramBatch::new(
                Matrix::from_columns(&pcols).unwrap(),
                ValidateOptions::default(),
            )
            .unwrap();
            let b1 = bary(&atoms, &w, &ck, mode, &fixed(mode)).map_err(e)?;
            let b2 = bary(
                &patoms,
                &Histogram::new(pw).unwrap(),
                &ck,
                mode,
                &fixed(mode),
            )
            .map_err(e)?;
            perm = perm.max(inf_norm_diff(&b1, &b2));
        }
    }
    check(
        collapse <= 1e-8 && onehot <= 1e-8 && uniform <= 1e-10 && mass <= 1e-8 && perm <= 1e-10,
        format!(
            "collapse {collapse:.1e}, one-hot {onehot:.1e}, zero-cost {uniform:.1e}, mass {mass:.1e}, permutation {perm:.1e}"
        ),
    )
}

// 8 ---------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let (mut sm, mut jac, mut diag) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(1..=12);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let eps = rng.gen_range(0.1..=2.0);

        let an = soft_min_grad(&z, eps).unwrap();
        let fd: Vec<f64> = (0..n)
            .map(|i| {
                let mut p = z.clone();
                let mut q = z.clone();
                p[i] += h;
                q[i] -= h;
                (soft_min(&p, eps).unwrap() - soft_min(&q, eps).unwrap()) / (2.0 * h)
            })
            .collect();
        sm = sm.max(relative_error(&an, &fd));

        let j = softmax_jacobian_vec(&z).unwrap();
        let mut fdj = Matrix::zeros(n, n);
        for k in 0..n {
            let mut p = z.clone();
            let mut q = z.clone();
            p[k] += h;
            q[k] -= h;
            let sp = softmax_vec(&p).unwrap();
            let sq = softmax_vec(&q).unwrap();
            for i in 0..n {
                fdj.set(i, k, (sp.values()[i] - sq.values()[i]) / (2.0 * h));
            }
        }
        jac = jac.max(relative_error(j.as_slice(), fdj.as_slice()));

        let (r, c) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
        let x: Vec<f64> = (0..r).map(|_| rng.gen_range(0.1..2.0)).collect();
        let y: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..2.0)).collect();
        let a = Matrix::from_fn(r, c, |_, _| rng.gen_range(0.0..1.0));
        let fast = diag_scale(&x, &a, &y).unwrap();
        for i in 0..r {
            for k in 0..c {
                let naive = x[i] * a.get(i, k) * y[k];
                let rel = (fast.get(i, k) - naive).abs() / naive.abs().max(f64::MIN_POSITIVE);
                diag = diag.max(rel);
            }
        }
    }
    check(
        sm <= 1e-6 && jac <= 1e-6 && diag <= 1e-14,
        format!("soft-min grad {sm:.1e}, softmax Jacobian {jac:.1e} (tol 1e-6), diag_scale {diag:.1e} (tol 1e-14)"),
    )
}

// 9 ---------------------------------------------------------------------------

fn bump(n: usize, center: f64, width: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - center) / width).powi(2)).exp() + 1e-3)
        .collect();
    let t: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / t).collect()
}

fn criterion_9() -> Outcome {
    let (n, m, s) = (8, 20, 2);
    let eps = 0.3;
    let iters = 50;
    let cost = Matrix::from_fn(n, n, |i, j| {
        ((i as f64 - j as f64) / (n - 1) as f64).powi(2)
    });
    let ck = build_kernel(cost, eps).unwrap();
    let atoms = HistogramBatch::new(
        Matrix::from_columns(&[bump(n, 1.0, 1.0), bump(n, 6.0, 1.2)]).unwrap(),
        ValidateOptions::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let wcols: Vec<Vec<f64>> = (0..m).map(|_| dirichlet(&mut rng, s)).collect();
    let weights = HistogramBatch::new(
        Matrix::from_columns(&wcols).unwrap(),
        ValidateOptions::default(),
    )
    .unwrap();
    let docs = reconstruct(&atoms, &weights, &ck, iters, BarycenterMode::Parallel)
        .map_err(|e| e.to_string())?;
    let data = HistogramBatch::new(
        docs,
        ValidateOptions {
            renormalize: true,
            ..ValidateOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;

    let cfg = WdlConfig {
        topics: s,
        inner_iters: iters,
        mode: BarycenterMode::Parallel,
        optimizer: OptimizerKind::Adam,
        hyper: Hyper {
            lr: 0.05,
            ..Hyper::default()
        },
        batch_size: 8,
        steps: 200,
        seed: 9,
        init: InitScheme::Gaussian { sigma: 0.1 },
        lambda_broadcast: false,
    };
    let trained = wdl_train(&data, &ck, &cfg).map_err(|e| e.to_string())?;
    let first = trained.loss_history[0];
    let last = *trained.loss_history.last().unwrap();

    // With a zero learning rate the parameters never move. At full batch every step
    // sees the same documents, so the recorded loss must be exactly constant.
    let frozen = WdlConfig {
        hyper: Hyper {
            lr: 0.0,
            ..cfg.hyper
        },
        batch_size: m,
        steps: 20,
        ..cfg
    };
    let flat = wdl_train(&data, &ck, &frozen).map_err(|e| e.to_string())?;
    let spread = flat
        .loss_history
        .iter()
        .map(|l| (l - flat.loss_history[0]).abs())
        .fold(0.0, f64::max);

    check(
        last <= 0.5 * first && spread == 0.0,
        format!(
            "batch loss {first:.3e} -> {last:.3e} (ratio {:.3}, need <= 0.5); lr=0 history spread {spread:.1e}",
            last / first
        ),
    )
}

// 10 --------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grads: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (lr, b1, b2, eh, gamma) = (0.03, 0.9, 0.999, 1e-8, 0.05);
    let hyper = Hyper {
        lr,
        beta1: b1,
        beta2: b2,
        eps: eh,
        weight_decay: gamma,
    };

    // scalar references written out from the update rules
    let (mut sgd_ref, mut adam_ref, mut adamw_ref) = (0.7, 0.7, 0.7);
    let (mut m, mut v, mut mw, mut vw) = (0.0, 0.0, 0.0, 0.0);
    let mut sgd = (OptimizerState::new(OptimizerKind::Sgd, hyper, 1), [0.7]);
    let mut adam = (OptimizerState::new(OptimizerKind::Adam, hyper, 1), [0.7]);
    let mut adamw = (OptimizerState::new(OptimizerKind::AdamW, hyper, 1), [0.7]);
    let mut worst = 0.0f64;
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        sgd_ref -= lr * g;

        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        adam_ref -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eh);

        mw = b1 * mw + (1.0 - b1) * g;
        vw = b2 * vw + (1.0 - b2) * g * g;
        adamw_ref = (1.0 - lr * gamma) * adamw_ref
            - lr * (mw / (1.0 - b1.powi(t))) / ((vw / (1.0 - b2.powi(t))).sqrt() + eh);

        sgd_step(&mut sgd.0, &mut sgd.1, &[g]).unwrap();
        adam_step(&mut adam.0, &mut adam.1, &[g]).unwrap();
        adamw_step(&mut adamw.0, &mut adamw.1, &[g]).unwrap();
        worst = worst
            .max((sgd.1[0] - sgd_ref).abs())
            .max((adam.1[0] - adam_ref).abs())
            .max((adamw.1[0] - adamw_ref).abs());
    }

    let nodecay = Hyper {
        weight_decay: 0.0,
        ..hyper
    };
    let mut sa = OptimizerState::new(OptimizerKind::Adam, nodecay, 3);
    let mut sw = OptimizerState::new(OptimizerKind::AdamW, nodecay, 3);
    let (mut ta, mut tw) = (vec![0.1, -0.2, 0.3], vec![0.1, -0.2, 0.3]);
    let mut identical = true;
    for _ in 0..10 {
        let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        adam_step(&mut sa, &mut ta, &g).unwrap();
        adamw_step(&mut sw, &mut tw, &g).unwrap();
        identical &= ta.iter().zip(&tw).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    check(
        worst <= 1e-12 && identical,
        format!("max deviation from scalar recurrences {worst:.1e} (tol 1e-12); AdamW(γ=0) == Adam bitwise: {identical}"),
    )
}

// 11 --------------------------------------------------------------------------

fn write_csv(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    std::fs::write(path, text).unwrap();
}

fn column(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|&x| vec![x]).collect()
}

/// Writes the inputs used by the CLI runs into `dir`.
fn cli_inputs(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 6;
    let cost = Matrix::from_fn(n, n, |i, j| ((i as f64 - j as f64) / 5.0).powi(2));
    write_csv(&dir.join("cost.csv"), &cost.to_rows());
    write_csv(&dir.join("a.csv"), &column(&dirichlet(&mut rng, n)));
    write_csv(&dir.join("b.csv"), &column(&dirichlet(&mut rng, n)));
    write_csv(&dir.join("target.csv"), &column(&dirichlet(&mut rng, n)));
    let cols: Vec<Vec<f64>> = (0..3).map(|_| dirichlet(&mut rng, n)).collect();
    write_csv(
        &dir.join("atoms.csv"),
        &Matrix::from_columns(&cols).unwrap().to_rows(),
    );
    write_csv(&dir.join("w.csv"), &column(&dirichlet(&mut rng, 3)));
    let docs: Vec<Vec<f64>> = (0..10).map(|_| dirichlet(&mut rng, n)).collect();
    write_csv(
        &dir.join("docs.csv"),
        &Matrix::from_columns(&docs).unwrap().to_rows(),
    );
}

fn cli_runs() -> Vec<Vec<&'static str>> {
    vec![
        vec![
            "sinkhorn",
            "--a",
            "a.csv",
            "--b",
            "b.csv",
            "--cost",
            "cost.csv",
            "--epsilon",
            "0.2",
            "--out",
            "s_vanilla.json",
        ],
        vec![
            "sinkhorn",
            "--a",
            "a.csv",
            "--b",
            "b.csv",
            "--cost",
            "cost.csv",
            "--epsilon",
            "0.2",
            "--mode",
            "log",
            "--grad",
            "--max-iters",
            "80",
            "--out",
            "s_log.json",
        ],
        vec![
            "sinkhorn",
            "--a",
            "atoms.csv",
            "--b",
            "atoms.csv",
            "--cost",
            "cost.csv",
            "--epsilon",
            "0.2",
            "--mode",
            "parallel",
            "--out",
            "s_par.json",
        ],
        vec![
            "barycenter",
            "--atoms",
            "atoms.csv",
            "--weights",
            "w.csv",
            "--cost",
            "cost.csv",
            "--epsilon",
            "0.3",
            "--out",
            "bary.csv",
        ],
        vec![
            "barycenter",
            "--atoms",
            "atoms.csv",
            "--weights",
            "w.csv",
            "--cost",
            "cost.csv",
            "--epsilon",
            "0.3",
            "--mode",
            "log",
            "--max-iters",
            "40",
            "--grad",
            "--target",
            "target.csv",
            "--grad-out",
            "bary_grad.json",
            "--out",
            "bary_log.csv",
        ],
        vec![
            "wdl",
            "--data",
            "docs.csv",
            "--cost",
            "cost.csv",
            "--topics",
            "2",
            "--epsilon",
            "0.3",
            "--inner-iters",
            "20",
            "--batch",
            "4",
            "--steps",
            "15",
            "--seed",
            "3",
            "--init",
            "gaussian",
            "--out-atoms",
            "wdl_atoms.csv",
            "--out-weights",
            "wdl_weights.csv",
            "--loss-out",
            "wdl_loss.csv",
        ],
        vec![
            "gradcheck",
            "--which",
            "barycenter-log",
            "--trials",
            "3",
            "--iters",
            "20",
            "--dims",
            "4x4x2",
            "--seed",
            "7",
            "--out",
            "gc.json",
        ],
    ]
}

const CLI_OUTPUTS: &[&str] = &[
    "s_vanilla.json",
    "s_log.json",
    "s_par.json",
    "bary.csv",
    "bary_log.csv",
    "bary_grad.json",
    "wdl_atoms.csv",
    "wdl_weights.csv",
    "wdl_loss.csv",
    "gc.json",
];

fn run_cli_suite(dir: &Path, threads: &str) -> Result<(), String> {
    cli_inputs(dir);
    for args in cli_runs() {
        let status = Command::new(env!("CARGO_BIN_EXE_otkit"))
            .args(&args)
            .current_dir(dir)
            .env("OTKIT_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "`otkit {}` failed: {}",
                args.join(" "),
                String::from_utf8_lossy(&status.stderr)
            ));
        }
    }
    Ok(())
}

fn criterion_11() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    run_cli_suite(dirs[0].path(), "1")?;
    run_cli_suite(dirs[1].path(), "1")?;
    run_cli_suite(dirs[2].path(), "4")?;
    let mut differing = Vec::new();
    for name in CLI_OUTPUTS {
        let read = |d: &tempfile::TempDir| -> Vec<u8> {
            std::fs::read(d.path().join(name)).unwrap_or_default()
        };
        let base = read(&dirs[0]);
        if base.is_empty() || read(&dirs[1]) != base || read(&dirs[2]) != base {
            differing.push(*name);
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} output files byte-identical across reruns and thread counts",
                CLI_OUTPUTS.len()
            )
        } else {
            format!("outputs differ or are missing: {differing:?}")
        },
    )
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 11] = [
        (
            "1  2x2 closed-form coupling",
            criterion_1,
            Duration::from_secs(1),
        ),
        (
            "2  marginal feasibility",
            criterion_2,
            Duration::from_secs(10),
        ),
        (
            "3  cross-solver agreement",
            criterion_3,
            Duration::from_secs(10),
        ),
        (
            "4  log-domain stability",
            criterion_4,
            Duration::from_secs(5),
        ),
        (
            "5  sinkhorn gradient correctness",
            criterion_5,
            Duration::from_secs(30),
        ),
        (
            "6  barycenter gradient correctness",
            criterion_6,
            Duration::from_secs(60),
        ),
        (
            "7  barycenter structural properties",
            criterion_7,
            Duration::from_secs(5),
        ),
        (
            "8  soft-min / softmax / diag_scale lemmas",
            criterion_8,
            Duration::from_secs(5),
        ),
        (
            "9  dictionary learning end-to-end",
            criterion_9,
            Duration::from_secs(300),
        ),
        (
            "10 optimizer recurrences",
            criterion_10,
            Duration::from_secs(1),
        ),
        ("11 CLI determinism", criterion_11, Duration::from_secs(10)),
    ];
    let mut failures = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (mut ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let mut timing = format!("{:.2}s / {}s", elapsed.as_secs_f64(), budget.as_secs());
        if elapsed > budget {
            ok = false;
            timing.push_str(" over budget");
        }
        if !ok {
            failures += 1;
        }
        println!(
            "{} {name}: {detail} [{timing}]",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
