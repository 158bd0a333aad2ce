use serde::{Deserialize, Serialize};

use super::diagnostics::{epsilon_closeness, fit_decay_rate, FlowDiagnostics, FlowSample};
use super::state::{step_with_rhs, sup_distance, sup_norm_interior, FlowState, RescaleVariant};
use crate::error::{Error, Result};
use crate::geometry::BallConfig;
use crate::linalg::{self, MAX_SQ};
use crate::tensor_calc::{l2_distance_sq, MetricField};

/// Initial data must be at least this close to the reference.
pub const EPSILON_GATE: f64 = 0.25;
/// Safety factor of the automatic time step.
pub const AUTO_DT_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Fixed time step; `None` picks `0.1·h²/max λ_max(ḡ⁻¹)`.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Stop once `l2_dist_sq ≤ tol · l2_dist_sq(0)`.
    pub tol: f64,
    pub truncation: f64,
    pub variant: RescaleVariant,
    /// How many times a failed step may be retried with half the step.
    pub max_retries: u32,
    /// Record a sample every this many steps (plus the first and last).
    pub sample_every: usize,
    /// Also stop once the metric is this close to the reference.
    pub epsilon_stop: Option<f64>,
    pub curvature: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_max: 2.0,
            tol: 1e-4,
            truncation: 0.9,
            variant: RescaleVariant::PaperExact,
            max_retries: 4,
            sample_every: 10,
            epsilon_stop: None,
            curvature: 1.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.truncation > 0.0 && self.truncation < 1.0) {
            return bad(format!("truncation must lie in (0, 1), got {}", self.truncation));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if !(self.curvature > 0.0) || !self.curvature.is_finite() {
            return bad(format!("flow curvature must be positive, got {}", self.curvature));
        }
        if let Some(e) = self.epsilon_stop {
            if !(e > 0.0) {
                return bad(format!("epsilon_stop must be positive, got {e}"));
            }
        }
        Ok(())
    }
}

/// Largest eigenvalue of `ḡ⁻¹` over masked-in nodes.
pub fn max_inverse_eigenvalue(metric: &MetricField) -> Result<f64> {
    let grid = metric.grid();
    let n = grid.dim();
    let mut d: f64 = 0.0;
    for node in 0..grid.node_count() {
        if !grid.is_inside(node) {
            continue;
        }
        let mut inv = [0.0; MAX_SQ];
        if !linalg::spd_inverse(n, metric.node(node), &mut inv) {
            return Err(Error::NotPositiveDefinite { node: Some(node) });
        }
        d = d.max(linalg::sym_max_eigenvalue(n, &inv[..n * n]));
    }
    Ok(d)
}

/// Explicit diffusive stability limit `h²/(2n·max λ_max(ḡ⁻¹))`.
pub fn stability_bound(metric: &MetricField) -> Result<f64> {
    let h = metric.grid().min_spacing();
    let n = metric.dim() as f64;
    Ok(h * h / (2.0 * n * max_inverse_eigenvalue(metric)?))
}

/// Default step `0.1·h²/max λ_max(ḡ⁻¹)`.
pub fn auto_dt(metric: &MetricField) -> Result<f64> {
    let h = metric.grid().min_spacing();
    Ok(AUTO_DT_FACTOR * h * h / max_inverse_eigenvalue(metric)?)
}

/// Runs the flow from `initial` until the distance tolerance, the optional
/// closeness target, or `t_max` is reached.
pub fn evolve(initial: &MetricField, cfg: &FlowConfig) -> Result<(MetricField, FlowDiagnostics)> {
    evolve_observed(initial, cfg, |_| {})
}

/// Like [`evolve`] but calls `observer` on the state at every recorded sample.
pub fn evolve_observed(
    initial: &MetricField,
    cfg: &FlowConfig,
    mut observer: impl FnMut(&FlowState),
) -> Result<(MetricField, FlowDiagnostics)> {
    cfg.validate()?;
    let ball = BallConfig::new(initial.dim(), cfg.curvature)?;
    let mut state = FlowState::new(initial.clone(), ball, cfg.variant)?;
    let eps0 = epsilon_closeness(state.metric(), state.reference())?;
    if eps0 > EPSILON_GATE {
        return Err(Error::EpsilonGate {
            epsilon: eps0,
            limit: EPSILON_GATE,
            hint: "the initial metric must be a small perturbation of the hyperbolic reference",
        });
    }
    let bound = stability_bound(state.metric())?;
    let dt = match cfg.dt {
        Some(dt) if dt > bound => {
            return Err(Error::InvalidConfig(format!(
                "dt = {dt} exceeds the explicit stability bound {bound}"
            )))
        }
        Some(dt) => dt,
        None => auto_dt(state.metric())?,
    };

    let l2_0 = l2_distance_sq(state.metric(), state.reference())?;
    let sup_0 = sup_distance(state.metric(), state.reference());
    let mut diag = FlowDiagnostics {
        samples: vec![FlowSample {
            t: 0.0,
            l2_dist_sq: l2_0,
            sup_dist: sup_0,
            epsilon: eps0,
            c: 0.0,
        }],
        fitted_rate: None,
        fit_r2: None,
        steps: 0,
        converged: false,
        dt,
        retries: 0,
        sup_growth: if sup_0 > 0.0 { 1.0 } else { 0.0 },
    };
    observer(&state);

    let target = cfg.tol * l2_0;
    let done = |l2: f64, eps: f64| l2 <= target || cfg.epsilon_stop.is_some_and(|e| eps <= e);
    if done(l2_0, eps0) {
        diag.converged = true;
        return Ok((state.metric().clone(), diag));
    }

    let mut c_total = 0.0;
    while state.time() < cfg.t_max {
        let mut h = dt.min(cfg.t_max - state.time());
        let mut attempt = 0;
        let stepped = loop {
            match step_with_rhs(&state, h) {
                Ok(s) => break s,
                Err(Error::Instability { .. }) if attempt < cfg.max_retries => {
                    attempt += 1;
                    diag.retries += 1;
                    h *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        c_total += h * sup_norm_interior(&stepped.rhs, state.metric());
        state = stepped.state;
        diag.steps += 1;

        let l2 = l2_distance_sq(state.metric(), state.reference())?;
        let sampled = diag.steps % cfg.sample_every == 0;
        let needs_eps = sampled || cfg.epsilon_stop.is_some();
        let eps = if needs_eps {
            epsilon_closeness(state.metric(), state.reference())?
        } else {
            f64::NAN
        };
        let finished = done(l2, eps) || state.time() >= cfg.t_max;
        if sampled || finished {
            let eps = if eps.is_nan() {
                epsilon_closeness(state.metric(), state.reference())?
            } else {
                eps
            };
            let sup = sup_distance(state.metric(), state.reference());
            if sup_0 > 0.0 {
                diag.sup_growth = diag.sup_growth.max(sup / sup_0);
            }
            diag.samples.push(FlowSample {
                t: state.time(),
                l2_dist_sq: l2,
                sup_dist: sup,
                epsilon: eps,
                c: c_total,
            });
            observer(&state);
        }
        if done(l2, eps) {
            diag.converged = true;
            break;
        }
        if finished {
            break;
        }
    }
    if let Ok((rate, r2)) = fit_decay_rate(&diag) {
        diag.fitted_rate = Some(rate);
        diag.fit_r2 = Some(r2);
    }
    Ok((state.metric().clone(), diag))
}

/// `(1 + a·β(|x|/R))·g^H` with the smooth bump `β(s) = exp(1 − 1/(1 − s²))`
/// supported in `|x| < R`.
pub fn bump_perturbation(reference: &MetricField, amplitude: f64, radius: f64) -> Result<MetricField> {
    reference.conformal(|x| 1.0 + amplitude * bump(x, radius))
}

pub fn bump(x: &[f64], radius: f64) -> f64 {
    let s: f64 = x.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
    if s < 1.0 {
        (1.0 - 1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}
