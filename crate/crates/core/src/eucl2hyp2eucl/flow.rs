use std::sync::Arc;

use serde::Serialize;

use super::{FlowBackend, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::BallConfig;
use crate::ricci_flow::{
    auto_dt, bump_perturbation, epsilon_closeness, hyperbolic_reference, linearized_flow, step, FlowState,
    RescaleVariant,
};
use crate::tensor_calc::GridSpec;

/// Nodes per axis of the surrogate field used by the pde backend.
pub const PDE_NODES: usize = 17;
const PDE_T_MAX: f64 = 4.0;

/// Conformal log-perturbation `ḡ = e^u·g^H`, one `u` per batch sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerturbationModel {
    pub u: Vec<f64>,
}

impl PerturbationModel {
    pub fn new(u: Vec<f64>) -> Self {
        Self { u }
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Closeness of `e^u·g^H` to `g^H`: `e^{max|u|} − 1`.
    pub fn epsilon(&self) -> f64 {
        self.max_abs().exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowReport {
    /// Flow time needed to reach the tolerance (0 when already there).
    pub time: f64,
    pub epsilon_before: f64,
    pub epsilon_after: f64,
    pub steps: usize,
    pub reached: bool,
}

/// Drives the perturbation towards zero until `e^{max|u|} − 1 ≤ flow_tol`.
pub fn flow_step(p: &PerturbationModel, cfg: &TrainConfig) -> Result<(PerturbationModel, FlowReport)> {
    if p.u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("perturbation"));
    }
    let eps0 = p.epsilon();
    if eps0 > cfg.epsilon_target {
        return Err(Error::EpsilonGate {
            epsilon: eps0,
            limit: cfg.epsilon_target,
            hint: "increase alpha or lower the learning rate so the embedded metric stays close",
        });
    }
    let mut report = FlowReport {
        time: 0.0,
        epsilon_before: eps0,
        epsilon_after: eps0,
        steps: 0,
        reached: eps0 <= cfg.flow_tol,
    };
    if report.reached || cfg.flow_backend == FlowBackend::Skip {
        return Ok((p.clone(), report));
    }
    let out = match cfg.flow_backend {
        FlowBackend::Linearized => {
            let target = cfg.flow_tol.ln_1p();
            // tiny overshoot keeps rounding from landing just above the tolerance
            let t = (p.max_abs() / target).ln() / cfg.kappa * (1.0 + 1e-12);
            report.time = t;
            PerturbationModel::new(p.u.iter().map(|&u| linearized_flow(u, t, cfg.kappa)).collect())
        }
        FlowBackend::Pde => {
            let (ratio, time, steps) = pde_decay(eps0, cfg)?;
            report.time = time;
            report.steps = steps;
            PerturbationModel::new(p.u.iter().map(|&u| u * ratio).collect())
        }
        FlowBackend::Skip => unreachable!(),
    };
    report.epsilon_after = out.epsilon();
    report.reached = report.epsilon_after <= cfg.flow_tol;
    Ok((out, report))
}

/// Evolves `(1 + ε0·bump)·g^H` next to an unperturbed copy and returns the
/// factor by which the log-closeness between the two shrank.
fn pde_decay(eps0: f64, cfg: &TrainConfig) -> Result<(f64, f64, usize)> {
    let ball = BallConfig::new(2, cfg.r)?;
    let h = 1.0 / (PDE_NODES as f64 - 1.0) / cfg.r.sqrt().max(1.0);
    let grid = Arc::new(GridSpec::truncated_ball(&ball, PDE_NODES, h, 0.9)?);
    let reference = hyperbolic_reference(&grid, &ball)?;
    let radius = 0.45 * (PDE_NODES as f64 - 1.0) * h;
    let perturbed = bump_perturbation(&reference, eps0, radius)?;
    let variant = RescaleVariant::RScaled;
    let mut moving = FlowState::with_reference(perturbed, reference.clone(), ball.clone(), variant)?;
    let mut still = FlowState::with_reference(reference.clone(), reference, ball, variant)?;
    let dt = auto_dt(moving.metric())?;
    let log0 = epsilon_closeness(moving.metric(), still.metric())?.ln_1p();
    let target = cfg.flow_tol.ln_1p();
    let mut log_eps = log0;
    let mut steps = 0;
    while log_eps * eps0.ln_1p() / log0 > target && moving.time() < PDE_T_MAX {
        moving = step(&moving, dt)?;
        still = step(&still, dt)?;
        steps += 1;
        log_eps = epsilon_closeness(moving.metric(), still.metric())?.ln_1p();
    }
    Ok((log_eps / log0, moving.time(), steps))
}
