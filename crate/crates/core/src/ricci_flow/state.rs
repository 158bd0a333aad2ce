use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{conformal_factor, BallConfig};
use crate::linalg::{self, MAX_SQ};
use crate::tensor_calc::{
    christoffel, christoffel_with, deturck_at, lie_at, norm_sq_at, par_fill, partials, ricci_at,
    second_partials_with, ChristoffelField, Field, GridSpec, MetricField,
};

/// Which constant multiplies the `−2(n−1)ḡ` rescaling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleVariant {
    /// `−2(n−1)ḡ`; the hyperbolic metric is stationary only for `r = 1`.
    PaperExact,
    /// `−2(n−1)r·ḡ`; stationary for every `r`.
    RScaled,
}

impl RescaleVariant {
    pub fn coefficient(self, curvature: f64) -> f64 {
        match self {
            RescaleVariant::PaperExact => 1.0,
            RescaleVariant::RScaled => curvature,
        }
    }
}

/// `λ_x^2 I` sampled at every masked-in node.
pub fn hyperbolic_reference(grid: &Arc<GridSpec>, ball: &BallConfig) -> Result<MetricField> {
    if grid.dim() != ball.dim() {
        return Err(Error::Dimension {
            expected: ball.dim(),
            got: grid.dim(),
        });
    }
    let n = grid.dim();
    let f = par_fill(grid, n * n, |node, out| {
        let x = grid.coords(node);
        match conformal_factor(ball, &x[..n]) {
            Ok(l) => {
                for i in 0..n {
                    out[i * n + i] = l * l;
                }
                true
            }
            Err(_) => false,
        }
    })
    .map_err(|node| Error::DegenerateGrid(format!("node {node} lies outside the ball")))?;
    MetricField::new(f)
}

/// The evolving metric together with its fixed hyperbolic reference.
///
/// Boundary nodes always carry the reference values.
#[derive(Debug, Clone)]
pub struct FlowState {
    time: f64,
    metric: MetricField,
    reference: MetricField,
    reference_gamma: Arc<ChristoffelField>,
    ball: BallConfig,
    variant: RescaleVariant,
}

impl FlowState {
    /// Builds a state at `t = 0`; boundary values of `metric` are replaced by
    /// the reference.
    pub fn new(metric: MetricField, ball: BallConfig, variant: RescaleVariant) -> Result<Self> {
        let reference = hyperbolic_reference(metric.grid(), &ball)?;
        Self::with_reference(metric, reference, ball, variant)
    }

    /// Like [`FlowState::new`] with an explicit reference metric.
    pub fn with_reference(
        metric: MetricField,
        reference: MetricField,
        ball: BallConfig,
        variant: RescaleVariant,
    ) -> Result<Self> {
        metric.field().check_same_grid(reference.field())?;
        let grid = metric.grid().clone();
        let mut f = metric.into_field();
        for node in grid.boundary_nodes() {
            f.node_mut(node).copy_from_slice(reference.node(node));
        }
        let metric = MetricField::new(f)?;
        let reference_gamma = Arc::new(christoffel(&reference)?);
        Ok(Self {
            time: 0.0,
            metric,
            reference,
            reference_gamma,
            ball,
            variant,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn reference(&self) -> &MetricField {
        &self.reference
    }

    pub fn ball(&self) -> &BallConfig {
        &self.ball
    }

    pub fn variant(&self) -> RescaleVariant {
        self.variant
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.metric.grid()
    }

    pub(crate) fn reference_gamma(&self) -> &ChristoffelField {
        &self.reference_gamma
    }

    fn with_metric(&self, metric: MetricField, time: f64) -> Self {
        Self {
            time,
            metric,
            reference: self.reference.clone(),
            reference_gamma: self.reference_gamma.clone(),
            ball: self.ball,
            variant: self.variant,
        }
    }
}

/// Right-hand side `−2Ric(ḡ) + ∇_iW_j + ∇_jW_i − 2(n−1)c·ḡ` at every masked-in node.
pub fn flow_rhs(state: &FlowState, variant: RescaleVariant) -> Result<Field> {
    let metric = &state.metric;
    let grid = metric.grid().clone();
    let n = grid.dim();
    let dg = partials(metric.field());
    let ddg = second_partials_with(metric.field(), &dg);
    let gamma = christoffel_with(metric, &dg)?;
    let gref = state.reference_gamma();
    let w = par_fill(&grid, n, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !linalg::spd_inverse(n, metric.node(node), &mut inv) {
            return false;
        }
        deturck_at(n, metric.node(node), &inv, gamma.field().node(node), gref.field().node(node), out);
        true
    })
    .map_err(|node| Error::NotPositiveDefinite { node: Some(node) })?;
    let dw = partials(&w);
    let c = 2.0 * (n as f64 - 1.0) * variant.coefficient(state.ball.curvature());
    par_fill(&grid, n * n, |node, out| {
        let g = metric.node(node);
        let mut inv = [0.0; MAX_SQ];
        if !linalg::spd_inverse(n, g, &mut inv) {
            return false;
        }
        let gam = gamma.field().node(node);
        let mut ric = [0.0; MAX_SQ];
        ricci_at(n, &inv, dg.node(node), ddg.node(node), gam, &mut ric);
        let mut lie = [0.0; MAX_SQ];
        lie_at(n, dw.node(node), gam, w.node(node), &mut lie);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let sym_ric = 0.5 * (ric[k] + ric[j * n + i]);
                out[k] = -2.0 * sym_ric + lie[k] - c * g[k];
            }
        }
        out.iter().all(|v| v.is_finite())
    })
    .map_err(|node| Error::Instability {
        node,
        time: state.time,
        reason: "non-finite or non-SPD metric while evaluating the flow",
    })
}

/// Result of one explicit Euler step, with the RHS it used.
pub(crate) struct Stepped {
    pub state: FlowState,
    pub rhs: Field,
}

pub(crate) fn step_with_rhs(state: &FlowState, dt: f64) -> Result<Stepped> {
    let rhs = flow_rhs(state, state.variant)?;
    let grid = state.grid().clone();
    let n = grid.dim();
    let metric = state.metric.field();
    let reference = state.reference.field();
    let next = par_fill(&grid, n * n, |node, out| {
        if grid.is_boundary(node) {
            out.copy_from_slice(reference.node(node));
            return true;
        }
        let g = metric.node(node);
        let r = rhs.node(node);
        for k in 0..n * n {
            out[k] = g[k] + dt * r[k];
        }
        let mut l = [0.0; MAX_SQ];
        out.iter().all(|v| v.is_finite()) && linalg::cholesky(n, out, &mut l)
    })
    .map_err(|node| Error::Instability {
        node,
        time: state.time,
        reason: "metric lost positive definiteness or became non-finite",
    })?;
    let metric = MetricField::new(next).map_err(|e| match e {
        Error::NotPositiveDefinite { node } => Error::Instability {
            node: node.unwrap_or(0),
            time: state.time,
            reason: "metric lost symmetry or positive definiteness",
        },
        other => other,
    })?;
    Ok(Stepped {
        state: state.with_metric(metric, state.time + dt),
        rhs,
    })
}

/// One explicit Euler step: interior nodes move along the RHS, boundary nodes
/// stay pinned to the reference.
pub fn step(state: &FlowState, dt: f64) -> Result<FlowState> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("time step must be >= 0, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    Ok(step_with_rhs(state, dt)?.state)
}

/// Max over interior nodes of `|rhs|` measured with `metric`.
pub(crate) fn sup_norm_interior(rhs: &Field, metric: &MetricField) -> f64 {
    let grid = metric.grid();
    let n = grid.dim();
    let mut sup: f64 = 0.0;
    for node in 0..grid.node_count() {
        if !grid.is_interior(node) {
            continue;
        }
        let mut inv = [0.0; MAX_SQ];
        if linalg::spd_inverse(n, metric.node(node), &mut inv) {
            sup = sup.max(norm_sq_at(n, &inv, rhs.node(node)).sqrt());
        }
    }
    sup
}

/// Max over masked-in nodes of `|ḡ − ref|_ref`.
pub(crate) fn sup_distance(metric: &MetricField, reference: &MetricField) -> f64 {
    let grid = metric.grid();
    let n = grid.dim();
    let mut sup: f64 = 0.0;
    let mut h = [0.0; MAX_SQ];
    for node in 0..grid.node_count() {
        if !grid.is_inside(node) {
            continue;
        }
        let (a, b) = (metric.node(node), reference.node(node));
        for k in 0..n * n {
            h[k] = a[k] - b[k];
        }
        let mut inv = [0.0; MAX_SQ];
        if linalg::spd_inverse(n, b, &mut inv) {
            sup = sup.max(norm_sq_at(n, &inv, &h).sqrt());
        }
    }
    sup
}
