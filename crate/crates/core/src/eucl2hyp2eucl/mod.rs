//! Flow-assisted hyperbolic embedding training.
//!
//! Network outputs for four translated copies of each input are embedded in
//! the Poincaré ball by the exponential map. A translation-consistency
//! penalty on the conformal factors keeps the induced metric close to the
//! hyperbolic one, a flow step removes the remaining perturbation, and the
//! logarithmic map brings the first copy back for the softmax loss.
//! Gradients at the ball stage are preconditioned by the inverse metric.

use serde::{Deserialize, Serialize};

use crate::datasets::ShiftMode;
use crate::error::{Error, Result};
use crate::nn_engine::Activation;

mod flow;
mod pipeline;
mod regularization;
mod train;

pub use flow::{flow_step, FlowReport, PerturbationModel, PDE_NODES};
pub use pipeline::{
    backward_hybrid, embed, gradcheck, loss_total, perturbation_from, translated_forward, BatchPass,
    Embedding, GradcheckReport, Precondition,
};
pub use regularization::{
    bound_lower, bound_upper, conformal_metrics, regularization_estimate, regularization_raw, LambdaQuad,
};
pub use train::{
    ball_radius_monitor, evaluate, run_comparison, train, write_epoch_csv, Arm, ArmOutcome, ArmSummary, ComparisonReport,
    EpochLog, RadiusStats, SeedPair, ShiftedInputs, TrainRun, EPOCH_CSV_HEADER,
};

/// Largest allowed translation in pixels.
pub const MAX_SHIFT: i64 = 3;

/// Row shifts `k1, k2` and column shifts `j1, j2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub k1: i64,
    pub k2: i64,
    pub j1: i64,
    pub j2: i64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            k1: 1,
            k2: -1,
            j1: 1,
            j2: -1,
        }
    }
}

impl ShiftSpec {
    pub fn new(k1: i64, k2: i64, j1: i64, j2: i64) -> Result<Self> {
        let s = Self { k1, k2, j1, j2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_range()?;
        if self.k1 == self.k2 || self.j1 == self.j2 {
            return Err(Error::InvalidConfig(format!(
                "shift pairs must differ (k1 != k2, j1 != j2), got {self:?}"
            )));
        }
        Ok(())
    }

    /// Magnitude check only; equal pairs are allowed.
    pub fn check_range(&self) -> Result<()> {
        if [self.k1, self.k2, self.j1, self.j2].iter().any(|s| s.abs() > MAX_SHIFT) {
            return Err(Error::InvalidConfig(format!(
                "translations must be at most {MAX_SHIFT} pixels, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(row, column)` offsets in the order k1, k2, j1, j2.
    pub fn offsets(&self) -> [(i64, i64); 4] {
        [(self.k1, 0), (self.k2, 0), (0, self.j1), (0, self.j2)]
    }

    pub fn dk(&self) -> f64 {
        (self.k1 - self.k2) as f64
    }

    pub fn dj(&self) -> f64 {
        (self.j1 - self.j2) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowBackend {
    /// Closed-form conformal decay `u ← u·e^{−κt}`.
    #[default]
    Linearized,
    /// Discrete flow on a small 2D conformal surrogate field.
    Pde,
    /// No flow; the ball-stage preconditioner uses the perturbed metric.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    /// Ball curvature parameter; `0` makes the embedding the identity.
    pub r: f64,
    pub epsilon_target: f64,
    pub shifts: ShiftSpec,
    pub shift_mode: ShiftMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    /// Largest gradient norm passed to the optimizer; `inf` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub flow_backend: FlowBackend,
    pub kappa: f64,
    pub flow_tol: f64,
    pub hidden: usize,
    pub activation: Activation,
    /// Divide the ball-stage cotangent by the metric.
    pub precondition: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            r: 0.01,
            epsilon_target: 0.25,
            shifts: ShiftSpec::default(),
            shift_mode: ShiftMode::ZeroPad,
            epochs: 50,
            batch_size: 32,
            lr0: 1.0,
            weight_decay: 1e-3,
            grad_clip: 0.25,
            seed: 0,
            flow_backend: FlowBackend::Linearized,
            kappa: 2.0,
            flow_tol: 1e-4,
            hidden: 64,
            activation: Activation::Relu,
            precondition: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.r >= 0.0) || !self.r.is_finite() {
            return bad(format!("curvature r must be non-negative, got {}", self.r));
        }
        if !(self.epsilon_target > 0.0 && self.epsilon_target <= 0.25) {
            return bad(format!("epsilon_target must lie in (0, 0.25], got {}", self.epsilon_target));
        }
        self.shifts.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return bad(format!("lr0 must be non-negative, got {}", self.lr0));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.flow_tol > 0.0 && self.flow_tol < self.epsilon_target) {
            return bad(format!(
                "flow_tol must lie in (0, epsilon_target), got {}",
                self.flow_tol
            ));
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if self.activation == Activation::Identity {
            return bad("hidden activation must be relu or tanh".into());
        }
        if self.flow_backend == FlowBackend::Pde && self.r == 0.0 {
            return bad("the pde flow backend needs r > 0".into());
        }
        Ok(())
    }
}
