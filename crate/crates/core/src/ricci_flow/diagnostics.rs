use std::io::Write;

use serde::Serialize;

use super::state::{flow_rhs, FlowState, RescaleVariant};
use crate::error::{Error, Result};
use crate::linalg::{self, MAX_DIM, MAX_SQ};
use crate::tensor_calc::{
    christoffel, covariant_derivative, partials, second_partials, tensor_norm_sq, MetricField,
};

/// Fraction of leading samples ignored by [`fit_decay_rate`].
pub const BURN_IN_FRACTION: f64 = 0.1;
/// Minimum number of samples left after burn-in.
pub const MIN_FIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSample {
    pub t: f64,
    pub l2_dist_sq: f64,
    pub sup_dist: f64,
    pub epsilon: f64,
    /// Accumulated `Σ dt·sup|∂ḡ/∂t|_ḡ` up to `t`.
    pub c: f64,
}

/// Time series and summary of one flow run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    pub samples: Vec<FlowSample>,
    pub fitted_rate: Option<f64>,
    pub fit_r2: Option<f64>,
    pub steps: usize,
    pub converged: bool,
    pub dt: f64,
    pub retries: usize,
    /// `max_t sup_dist(t) / sup_dist(0)`; 0 when the run starts at the reference.
    pub sup_growth: f64,
}

impl FlowDiagnostics {
    pub fn final_sample(&self) -> Option<&FlowSample> {
        self.samples.last()
    }

    /// Accumulated metric-speed integral at the end of the run.
    pub fn c_total(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.c)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "l2_dist_sq", "sup_dist", "epsilon", "C"])?;
        for s in &self.samples {
            out.write_record([
                s.t.to_string(),
                s.l2_dist_sq.to_string(),
                s.sup_dist.to_string(),
                s.epsilon.to_string(),
                s.c.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Smallest `ε` with `(1+ε)^{-1} ref ≤ ḡ ≤ (1+ε) ref` at every masked-in node.
pub fn epsilon_closeness(metric: &MetricField, reference: &MetricField) -> Result<f64> {
    metric.field().check_same_grid(reference.field())?;
    let grid = metric.grid();
    let n = grid.dim();
    let mut eps: f64 = 0.0;
    for node in 0..grid.node_count() {
        if !grid.is_inside(node) {
            continue;
        }
        let (lo, hi) = linalg::generalized_eigen_extremes(n, metric.node(node), reference.node(node))
            .ok_or(Error::NotPositiveDefinite { node: Some(node) })?;
        if !(lo > 0.0) {
            return Err(Error::NotPositiveDefinite { node: Some(node) });
        }
        eps = eps.max(hi - 1.0).max(1.0 / lo - 1.0);
    }
    Ok(eps)
}

/// Least-squares fit of `ln d = a − rate·t` on `(t, d)` pairs; returns `(rate, r2)`.
pub fn fit_log_linear(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    if let Some(&(t, d)) = points.iter().find(|(_, d)| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::Fit(format!("non-positive distance {d} at t = {t}")));
    }
    let m = points.len() as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = points.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, d) in points {
        let (dt, dy) = (t - tm, d.ln() - ym);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::Fit("all sample times coincide".into()));
    }
    let slope = sty / stt;
    let ss_res: f64 = points
        .iter()
        .map(|&(t, d)| {
            let e = d.ln() - (ym + slope * (t - tm));
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok((-slope, r2))
}

/// Decay rate of the `L^2` distance after dropping the burn-in samples.
pub fn fit_decay_rate(diag: &FlowDiagnostics) -> Result<(f64, f64)> {
    let points: Vec<(f64, f64)> = diag.samples.iter().map(|s| (s.t, s.l2_dist_sq)).collect();
    fit_series(&points)
}

pub(crate) fn fit_series(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let skip = (points.len() as f64 * BURN_IN_FRACTION).floor() as usize;
    let kept = &points[skip..];
    if kept.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples after burn-in, need at least {MIN_FIT_SAMPLES}",
            kept.len()
        )));
    }
    fit_log_linear(kept)
}

/// `h0·e^{−κt}`.
pub fn linearized_flow(h0: f64, t: f64, kappa: f64) -> f64 {
    h0 * (-kappa * t).exp()
}

/// Pointwise comparison of `∂_t|ḡ − g^H|^2` with
/// `Δ|ḡ − g^H|^2 − 2|∇(ḡ − g^H)|^2 + 4|ḡ − g^H|^2` at interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    /// `max(LHS − RHS)` over interior nodes (≤ 0 when the inequality holds).
    pub max_violation: f64,
    pub worst_node: Option<usize>,
    /// `sup |ḡ − g^H|^2` over interior nodes.
    pub scale: f64,
    pub max_lhs: f64,
    pub nodes: usize,
}

impl InequalityReport {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.max_violation <= rel_tol * self.scale
    }
}

pub fn check_evolution_inequality(state: &FlowState, variant: RescaleVariant) -> Result<InequalityReport> {
    let metric = state.metric();
    let reference = state.reference();
    let grid = metric.grid().clone();
    let n = grid.dim();
    let h = metric.field().axpby(1.0, reference.field(), -1.0)?;
    let f = tensor_norm_sq(&h, reference)?;
    let df = partials(&f);
    let ddf = second_partials(&f);
    let gamma = christoffel(metric)?;
    let nabla_h = covariant_derivative(metric, &gamma, &h)?;
    let rhs = flow_rhs(state, variant)?;

    let mut report = InequalityReport {
        max_violation: f64::NEG_INFINITY,
        worst_node: None,
        scale: 0.0,
        max_lhs: f64::NEG_INFINITY,
        nodes: 0,
    };
    for node in grid.interior_nodes() {
        let mut ginv = [0.0; MAX_SQ];
        let mut href = [0.0; MAX_SQ];
        if !linalg::spd_inverse(n, metric.node(node), &mut ginv)
            || !linalg::spd_inverse(n, reference.node(node), &mut href)
        {
            return Err(Error::NotPositiveDefinite { node: Some(node) });
        }
        let hv = h.node(node);
        let rv = rhs.node(node);
        let mut lhs = 0.0;
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        lhs += href[i * n + p] * href[j * n + q] * hv[i * n + j] * rv[p * n + q];
                    }
                }
            }
        }
        lhs *= 2.0;

        let fv = f.node(node)[0];
        let dfv = df.node(node);
        let ddfv = ddf.node(node);
        let gam = gamma.field().node(node);
        let mut lap = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut hess = ddfv[i * n + j];
                for k in 0..n {
                    hess -= gam[(k * n + i) * n + j] * dfv[k];
                }
                lap += ginv[i * n + j] * hess;
            }
        }

        // |∇h|^2 with all three indices raised by the reference
        let nh = nabla_h.node(node);
        let mut raised = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for p in 0..n {
                        for i in 0..n {
                            for j in 0..n {
                                s += href[a * n + p]
                                    * href[b * n + i]
                                    * href[c * n + j]
                                    * nh[(p * n + i) * n + j];
                            }
                        }
                    }
                    raised[(a * n + b) * n + c] = s;
                }
            }
        }
        let grad_sq: f64 = (0..n * n * n).map(|k| raised[k] * nh[k]).sum();

        let bound = lap - 2.0 * grad_sq + 4.0 * fv;
        let v = lhs - bound;
        if v > report.max_violation {
            report.max_violation = v;
            report.worst_node = Some(node);
        }
        report.max_lhs = report.max_lhs.max(lhs);
        report.scale = report.scale.max(fv);
        report.nodes += 1;
    }
    Ok(report)
}

/// Generalized eigenvalue extremes of `ḡ(t)` against `ḡ(0)` checked against
/// `[e^{−C}, e^{C}]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub c: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub holds: bool,
}

/// Slack added to both ends of the equivalence band.
pub const EQUIVALENCE_SLACK: f64 = 1e-6;

pub fn uniform_equivalence_monitor(
    diag: &FlowDiagnostics,
    initial: &MetricField,
    current: &MetricField,
) -> Result<EquivalenceReport> {
    current.field().check_same_grid(initial.field())?;
    let grid = initial.grid();
    let n = grid.dim();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for node in 0..grid.node_count() {
        if !grid.is_inside(node) {
            continue;
        }
        let (a, b) = linalg::generalized_eigen_extremes(n, current.node(node), initial.node(node))
            .ok_or(Error::NotPositiveDefinite { node: Some(node) })?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let c = diag.c_total();
    let lower_bound = (-c).exp() - EQUIVALENCE_SLACK;
    let upper_bound = c.exp() + EQUIVALENCE_SLACK;
    Ok(EquivalenceReport {
        c,
        min_ratio: lo,
        max_ratio: hi,
        lower_bound,
        upper_bound,
        holds: lo >= lower_bound && hi <= upper_bound,
    })
}
