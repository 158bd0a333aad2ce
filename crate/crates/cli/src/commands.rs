use std::path::PathBuf;
use std::sync::Arc;

use hyperflow::datasets::Split;
use hyperflow::eucl2hyp2eucl::{self as e2h, ShiftedInputs};
use hyperflow::geometry::BallConfig;
use hyperflow::nn_engine::init_xavier;
use hyperflow::ricci_flow::{bump_perturbation, evolve, hyperbolic_reference};
use hyperflow::tensor_calc::{curvature, GridSpec, MetricField};
use ndarray::Axis;
use serde::Serialize;

use crate::config::{MetricKind, RunConfig, GEOMETRY_R, TRAINING_R};
use crate::error::{CliError, CliResult};
use crate::output::RunDir;

fn open_run(cfg: &RunConfig, command: &str, r: f64) -> CliResult<RunDir> {
    let path = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("hyperflow-out").join(command));
    let dir = RunDir::acquire(&path)?;
    dir.write_text("config.toml", &cfg.echo(r)?)?;
    Ok(dir)
}

fn ball_grid(cfg: &RunConfig, r: f64) -> CliResult<(BallConfig, Arc<GridSpec>)> {
    let ball = BallConfig::new(cfg.dim, r)?;
    let grid = GridSpec::truncated_ball(&ball, cfg.grid_nodes, cfg.grid_spacing, cfg.truncation)?;
    Ok((ball, Arc::new(grid)))
}

#[derive(Debug, Serialize)]
struct FlowSummary {
    rate: Option<f64>,
    r2: Option<f64>,
    steps: usize,
    converged: bool,
    dt: f64,
    t_final: f64,
    l2_dist_sq_initial: f64,
    l2_dist_sq_final: f64,
    c_total: f64,
}

pub fn flow(cfg: &RunConfig) -> CliResult<()> {
    let r = cfg.resolved_r(GEOMETRY_R);
    let fc = cfg.flow_config(r);
    fc.validate()?;
    let (ball, grid) = ball_grid(cfg, r)?;
    let gh = hyperbolic_reference(&grid, &ball)?;
    let init = bump_perturbation(&gh, cfg.bump_amplitude, cfg.bump_radius)?;
    let dir = open_run(cfg, "flow", r)?;
    let (_, diag) = evolve(&init, &fc)?;
    diag.write_csv(dir.create("flow.csv")?)?;
    let first = diag.samples.first().map_or(0.0, |s| s.l2_dist_sq);
    let last = diag.final_sample().copied();
    let summary = FlowSummary {
        rate: diag.fitted_rate,
        r2: diag.fit_r2,
        steps: diag.steps,
        converged: diag.converged,
        dt: diag.dt,
        t_final: last.map_or(0.0, |s| s.t),
        l2_dist_sq_initial: first,
        l2_dist_sq_final: last.map_or(0.0, |s| s.l2_dist_sq),
        c_total: diag.c_total(),
    };
    dir.write_json("summary.json", &summary)?;
    println!(
        "flow: {} steps to t = {:.4}, converged = {}, rate = {}, r2 = {}",
        summary.steps,
        summary.t_final,
        summary.converged,
        fmt_opt(summary.rate),
        fmt_opt(summary.r2)
    );
    println!("wrote {}", dir.path().display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6}"))
}

#[derive(Debug, Serialize)]
struct CurvatureSummary {
    dim: usize,
    r: f64,
    spacing: f64,
    interior_nodes: usize,
    metric: MetricKind,
    /// Relative to `(n−1)·r·λ²` when that is non-zero, absolute otherwise.
    ricci_error: f64,
    scalar_error: f64,
    tol: f64,
    pass: bool,
}

/// Max interior errors of Ric and R against the constant-curvature values.
fn curvature_errors(metric: &MetricField, r: f64) -> CliResult<(f64, f64)> {
    let grid = metric.grid();
    let n = grid.dim();
    let nf = n as f64;
    let c = curvature(metric)?;
    let (mut e_ric, mut e_r) = (0.0f64, 0.0f64);
    for node in grid.interior_nodes() {
        let g = metric.node(node);
        let ric_scale = (nf - 1.0) * r * g[0];
        let ric_scale = if ric_scale > 0.0 { ric_scale } else { 1.0 };
        for k in 0..n * n {
            let want = -(nf - 1.0) * r * g[k];
            e_ric = e_ric.max((c.ricci.node(node)[k] - want).abs() / ric_scale);
        }
        let want = -nf * (nf - 1.0) * r;
        let r_scale = if want != 0.0 { want.abs() } else { 1.0 };
        e_r = e_r.max((c.scalar.node(node)[0] - want).abs() / r_scale);
    }
    Ok((e_ric, e_r))
}

pub fn curvature_check(cfg: &RunConfig) -> CliResult<()> {
    let r = cfg.resolved_r(GEOMETRY_R);
    let (ball, grid) = ball_grid(cfg, r)?;
    let (metric, target_r) = match cfg.metric {
        MetricKind::Hyperbolic => (hyperbolic_reference(&grid, &ball)?, r),
        MetricKind::Flat => (MetricField::identity(grid.clone()), 0.0),
    };
    let dir = open_run(cfg, "curvature", r)?;
    let (ricci_error, scalar_error) = curvature_errors(&metric, target_r)?;
    let worst = ricci_error.max(scalar_error);
    let summary = CurvatureSummary {
        dim: cfg.dim,
        r,
        spacing: cfg.grid_spacing,
        interior_nodes: grid.interior_nodes().len(),
        metric: cfg.metric,
        ricci_error,
        scalar_error,
        tol: cfg.curvature_tol,
        pass: worst <= cfg.curvature_tol,
    };
    dir.write_json("curvature.json", &summary)?;
    println!("max interior error: Ric {ricci_error:.3e}, R {scalar_error:.3e} (tol {:.1e})", cfg.curvature_tol);
    if summary.pass {
        return Ok(());
    }
    // second-order stencils: the error shrinks like h²
    let h_needed = cfg.grid_spacing * (cfg.curvature_tol / worst).sqrt();
    Err(CliError::CheckFailed(format!(
        "curvature error {worst:.3e} exceeds {:.1e}; the stencils are second order, so a spacing \
         of about {h_needed:.3e} (with grid_nodes scaled up to keep the domain) should pass",
        cfg.curvature_tol
    )))
}

pub fn gradcheck(cfg: &RunConfig) -> CliResult<()> {
    let r = cfg.resolved_r(GEOMETRY_R);
    let tc = cfg.train_config(r);
    tc.validate()?;
    let data = cfg.load_dataset()?;
    let inputs = ShiftedInputs::build(&data, Split::Train, &tc)?;
    if inputs.len() < cfg.gradcheck_batch {
        return Err(CliError::Config(format!(
            "gradcheck_batch {} exceeds the {} training samples",
            cfg.gradcheck_batch,
            inputs.len()
        )));
    }
    let idx: Vec<usize> = (0..cfg.gradcheck_batch).collect();
    let x: [_; 4] = std::array::from_fn(|m| inputs.shifted[m].select(Axis(0), &idx));
    let labels = &inputs.labels[..cfg.gradcheck_batch];
    let net = init_xavier(&[data.pixel_count(), cfg.hidden, data.num_classes()], cfg.activation, cfg.seed)?;
    let dir = open_run(cfg, "gradcheck", r)?;
    let report = e2h::gradcheck(
        &net,
        [x[0].view(), x[1].view(), x[2].view(), x[3].view()],
        labels,
        &tc,
        cfg.fd_step,
    )?;
    dir.write_json("gradcheck.json", &report)?;
    let worst = report.max_rel_error();
    println!(
        "max relative error: plain {:.3e}, preconditioned {:.3e} over {} parameters",
        report.plain.max_rel_error, report.preconditioned.max_rel_error, report.plain.params
    );
    if worst < cfg.gradcheck_tol {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed: {worst:.3e} >= {:.1e}",
            cfg.gradcheck_tol
        )))
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    arm: e2h::Arm,
    epochs: usize,
    train_acc: Option<f64>,
    test_acc: Option<f64>,
    diverged: Option<String>,
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let r = cfg.resolved_r(TRAINING_R);
    let tc = cfg.train_config(r);
    tc.validate()?;
    let data = cfg.load_dataset()?;
    let net = init_xavier(&[data.pixel_count(), cfg.hidden, data.num_classes()], cfg.activation, cfg.seed)?;
    let dir = open_run(cfg, "train", r)?;
    let (logs, failure) = match e2h::train(net, &data, &tc, cfg.arm) {
        Ok(run) => (run.logs, None),
        Err(hyperflow::Error::Divergence { epoch, reason, logs }) => {
            (logs, Some(hyperflow::Error::Divergence { epoch, reason, logs: Vec::new() }))
        }
        Err(e) => return Err(e.into()),
    };
    e2h::write_epoch_csv(&logs, dir.create("epochs.csv")?)?;
    let last = logs.last();
    dir.write_json(
        "summary.json",
        &TrainSummary {
            arm: cfg.arm,
            epochs: logs.len(),
            train_acc: last.map(|l| l.train_acc),
            test_acc: last.map(|l| l.test_acc),
            diverged: failure.as_ref().map(|e| e.to_string()),
        },
    )?;
    if let Some(l) = last {
        println!(
            "{:?} arm, {} epochs: train {:.4}, test {:.4}, N {:.3e}",
            cfg.arm, logs.len(), l.train_acc, l.test_acc, l.n_reg
        );
    } else {
        println!("{:?} arm: no epochs run", cfg.arm);
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn compare(cfg: &RunConfig) -> CliResult<()> {
    let r = cfg.resolved_r(TRAINING_R);
    let tc = cfg.train_config(r);
    tc.validate()?;
    let data = cfg.load_dataset()?;
    let dir = open_run(cfg, "compare", r)?;
    let report = e2h::run_comparison(&data, &tc, &cfg.seeds)?;
    dir.write_json("report.json", &report)?;
    for p in &report.pairs {
        e2h::write_epoch_csv(&p.hyperbolic.logs, dir.create(&format!("hyperbolic_seed{}.csv", p.seed))?)?;
        e2h::write_epoch_csv(&p.euclidean.logs, dir.create(&format!("euclidean_seed{}.csv", p.seed))?)?;
    }
    let pct = |v: f64| 100.0 * v;
    println!(
        "hyperbolic test {:.2} ± {:.2}%, euclidean test {:.2} ± {:.2}%, gap {:+.2} ± {:.2} pp over {} seeds",
        pct(report.hyperbolic.test_mean),
        pct(report.hyperbolic.test_std),
        pct(report.euclidean.test_mean),
        pct(report.euclidean.test_std),
        pct(report.gap_mean),
        pct(report.gap_std),
        report.pairs.len()
    );
    Ok(())
}
