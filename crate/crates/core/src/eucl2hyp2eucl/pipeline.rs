use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use super::flow::{flow_step, FlowReport, PerturbationModel};
use super::regularization::{estimate_grad, regularization_estimate, LambdaQuad};
use super::{FlowBackend, ShiftSpec, TrainConfig};
use crate::datasets::{design_matrix, translate, ImageSample, Normalization, ShiftMode};
use crate::error::{Error, Result};
use crate::geometry::{
    conformal_factor, conformal_factor_sq_grad, exp_map, exp_map_vjp, log_map, log_map_vjp, BallConfig, BallPoint,
    TangentVector,
};
use crate::nn_engine::{
    backward, finite_difference_check, forward, softmax_rows, softmax_vjp, DenseNet, ForwardTrace, GradCheckReport,
    GradientSet,
};

/// Runs the network on the batch translated by each of the four shifts
/// (k1, k2, j1, j2). Translation happens on raw pixels; `norm` is applied
/// afterwards.
pub fn translated_forward(
    net: &DenseNet,
    batch: &[&ImageSample],
    shifts: &ShiftSpec,
    mode: ShiftMode,
    norm: Option<Normalization>,
) -> Result<[(Array2<f64>, ForwardTrace); 4]> {
    shifts.check_range()?;
    let inputs = shifted_inputs(batch, shifts, mode, norm);
    forward_four(net, [inputs[0].view(), inputs[1].view(), inputs[2].view(), inputs[3].view()])
}

pub(crate) fn shifted_inputs(
    batch: &[&ImageSample],
    shifts: &ShiftSpec,
    mode: ShiftMode,
    norm: Option<Normalization>,
) -> [Array2<f64>; 4] {
    shifts.offsets().map(|(dk, dj)| {
        let moved: Vec<ImageSample> = batch
            .iter()
            .map(|s| ImageSample {
                pixels: translate(&s.pixels, dk, dj, mode),
                ..(*s).clone()
            })
            .collect();
        let refs: Vec<&ImageSample> = moved.iter().collect();
        let mut m = design_matrix(&refs);
        if let Some(n) = norm {
            m.mapv_inplace(|v| n.apply(v));
        }
        m
    })
}

pub(crate) fn forward_four(net: &DenseNet, inputs: [ArrayView2<f64>; 4]) -> Result<[(Array2<f64>, ForwardTrace); 4]> {
    let [a, b, c, d] = inputs.map(|x| forward(net, x));
    Ok([a?, b?, c?, d?])
}

/// Ball points and conformal factors for a batch of network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Array2<f64>,
    pub lambda: Array1<f64>,
}

impl Embedding {
    pub fn lambda_sq(&self, s: usize) -> f64 {
        self.lambda[s] * self.lambda[s]
    }
}

/// Row-wise exponential map.
pub fn embed(outputs: &Array2<f64>, ball: &BallConfig) -> Result<Embedding> {
    let (b, n) = outputs.dim();
    if n != ball.dim() {
        return Err(Error::Dimension {
            expected: ball.dim(),
            got: n,
        });
    }
    let mut points = Array2::zeros((b, n));
    let mut lambda = Array1::zeros(b);
    for (s, row) in outputs.rows().into_iter().enumerate() {
        let p = exp_map(ball, &TangentVector::new(row.to_vec())?)?;
        lambda[s] = conformal_factor(ball, p.coords())?;
        points.row_mut(s).iter_mut().zip(p.coords()).for_each(|(d, v)| *d = *v);
    }
    Ok(Embedding { points, lambda })
}

/// `u_s = clip(ln(mean λ² / geometric-mean λ²), ±ln(1+ε))` per sample.
pub fn perturbation_from(quads: &[LambdaQuad], epsilon: f64) -> PerturbationModel {
    let cap = epsilon.ln_1p();
    PerturbationModel::new(
        quads
            .iter()
            .map(|q| {
                let mean = q.iter().sum::<f64>() / 4.0;
                let log_geo = q.iter().map(|v| v.ln()).sum::<f64>() / 4.0;
                (mean.ln() - log_geo).clamp(-cap, cap)
            })
            .collect(),
    )
}

/// `mean_s ‖y_s − z_s‖² + α·N`.
pub fn loss_total(y: &Array2<f64>, z: &Array2<f64>, n_reg: f64, alpha: f64) -> Result<f64> {
    Ok(class_loss(y, z, None)? + alpha * n_reg)
}

fn class_loss(y: &Array2<f64>, z: &Array2<f64>, weights: Option<&[f64]>) -> Result<f64> {
    if y.dim() != z.dim() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: z.len(),
        });
    }
    let b = y.nrows();
    if b == 0 {
        return Ok(0.0);
    }
    let total: f64 = y
        .rows()
        .into_iter()
        .zip(z.rows())
        .enumerate()
        .map(|(s, (yr, zr))| {
            let e: f64 = yr.iter().zip(zr).map(|(a, b)| (a - b) * (a - b)).sum();
            weights.map_or(1.0, |w| w[s]) * e
        })
        .sum();
    Ok(total / b as f64)
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut z = Array2::zeros((labels.len(), classes));
    for (s, &l) in labels.iter().enumerate() {
        z[[s, l]] = 1.0;
    }
    z
}

/// How the ball-stage cotangent is treated in [`backward_hybrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precondition {
    /// Plain Euclidean chain rule: the gradient of [`loss_total`].
    Off,
    /// Divide by `λ²` at the embedded point (by `e^u·λ²` when the flow was skipped).
    Metric,
}

/// Everything one batch produces on the way to the loss.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub outputs: [Array2<f64>; 4],
    pub traces: [ForwardTrace; 4],
    pub embeddings: [Embedding; 4],
    pub quads: Vec<LambdaQuad>,
    pub n_reg: f64,
    /// Perturbation before and after the flow step.
    pub perturbation: PerturbationModel,
    pub flowed: PerturbationModel,
    pub flow: FlowReport,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub class_loss: f64,
    pub loss: f64,
}

impl BatchPass {
    pub fn run(
        net: &DenseNet,
        inputs: [ArrayView2<f64>; 4],
        labels: &[usize],
        cfg: &TrainConfig,
        ball: &BallConfig,
    ) -> Result<Self> {
        let fw = forward_four(net, inputs)?;
        let [(o0, t0), (o1, t1), (o2, t2), (o3, t3)] = fw;
        let outputs = [o0, o1, o2, o3];
        let traces = [t0, t1, t2, t3];
        let e = |m: usize| embed(&outputs[m], ball);
        let embeddings = [e(0)?, e(1)?, e(2)?, e(3)?];
        let b = labels.len();
        let quads: Vec<LambdaQuad> = (0..b)
            .map(|s| std::array::from_fn(|m| embeddings[m].lambda_sq(s)))
            .collect();
        let n_reg = regularization_estimate(&quads, &cfg.shifts);
        let perturbation = perturbation_from(&quads, cfg.epsilon_target);
        let (flowed, flow) = flow_step(&perturbation, cfg)?;

        let mut tangent = Array2::zeros(outputs[0].raw_dim());
        for (s, p) in embeddings[0].points.rows().into_iter().enumerate() {
            let v = log_map(ball, &BallPoint::new(ball, p.to_vec())?)?;
            tangent.row_mut(s).iter_mut().zip(v.coords()).for_each(|(d, x)| *d = *x);
        }
        let y = softmax_rows(tangent.view());
        let z = one_hot(labels, ball.dim());
        let class_loss = class_loss(&y, &z, None)?;
        let loss = class_loss + cfg.alpha * n_reg;
        Ok(Self {
            outputs,
            traces,
            embeddings,
            quads,
            n_reg,
            perturbation,
            flowed,
            flow,
            y,
            z,
            class_loss,
            loss,
        })
    }

    pub fn batch_len(&self) -> usize {
        self.y.nrows()
    }

    /// Factors applied to the ball-stage cotangent of each embedded point,
    /// indexed `[shift][sample]`.
    pub fn precondition_weights(&self, cfg: &TrainConfig, mode: Precondition) -> [Vec<f64>; 4] {
        std::array::from_fn(|m| {
            (0..self.batch_len())
                .map(|s| match mode {
                    Precondition::Off => 1.0,
                    Precondition::Metric => {
                        let g = self.embeddings[m].lambda_sq(s);
                        if cfg.flow_backend == FlowBackend::Skip {
                            (-self.perturbation.u[s]).exp() / g
                        } else {
                            1.0 / g
                        }
                    }
                })
                .collect()
        })
    }

    /// Euclidean derivative of the loss with respect to every embedded point,
    /// indexed `[shift]` with one row per sample.
    pub fn ball_cotangents(&self, cfg: &TrainConfig, ball: &BallConfig) -> Result<[Array2<f64>; 4]> {
        let b = self.batch_len();
        let n = ball.dim();
        let mut cot: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((b, n)));
        let inv_b = 1.0 / b.max(1) as f64;
        for s in 0..b {
            let gy = (&self.y.row(s) - &self.z.row(s)) * (2.0 * inv_b);
            let gt = softmax_vjp(self.y.row(s), gy.view());
            let p0 = self.embeddings[0].points.row(s).to_vec();
            let gp = log_map_vjp(ball, &p0, gt.as_slice().expect("contiguous"));
            cot[0].row_mut(s).iter_mut().zip(&gp).for_each(|(d, v)| *d += v);
            if cfg.alpha != 0.0 {
                let gl = estimate_grad(&self.quads[s], &cfg.shifts);
                for (m, c) in cot.iter_mut().enumerate() {
                    let pm = self.embeddings[m].points.row(s).to_vec();
                    let scale = cfg.alpha * inv_b * gl[m];
                    let dl = conformal_factor_sq_grad(ball, &pm)?;
                    c.row_mut(s).iter_mut().zip(&dl).for_each(|(d, v)| *d += scale * v);
                }
            }
        }
        Ok(cot)
    }
}

/// Gradient of the hybrid loss: softmax and log map back to the ball, the
/// penalty through `λ²` at every shift, the metric preconditioner on each
/// embedded point, the exponential map, then the network.
pub fn backward_hybrid(
    net: &DenseNet,
    pass: &BatchPass,
    cfg: &TrainConfig,
    ball: &BallConfig,
    mode: Precondition,
) -> Result<GradientSet> {
    let mut cot = pass.ball_cotangents(cfg, ball)?;
    let w = pass.precondition_weights(cfg, mode);
    let mut grads = GradientSet::zeros_like(net);
    for m in 0..4 {
        if cfg.alpha == 0.0 && m > 0 {
            break;
        }
        for s in 0..pass.batch_len() {
            let gp: Vec<f64> = cot[m].row(s).iter().map(|v| v * w[m][s]).collect();
            let x = pass.outputs[m].row(s).to_vec();
            let gx = exp_map_vjp(ball, &x, &gp);
            cot[m].row_mut(s).iter_mut().zip(&gx).for_each(|(d, v)| *d = *v);
        }
        grads.add_scaled(&backward(net, &pass.traces[m], cot[m].view())?, 1.0);
    }
    Ok(grads)
}

/// Squared error of `softmax(x_k1)` without any embedding, and its gradient.
pub(crate) fn euclidean_step(net: &DenseNet, input: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, GradientSet)> {
    let (x, trace) = forward(net, input)?;
    let y = softmax_rows(x.view());
    let z = one_hot(labels, x.ncols());
    let loss = class_loss(&y, &z, None)?;
    let inv_b = 1.0 / labels.len().max(1) as f64;
    let mut cot = Array2::zeros(x.raw_dim());
    for s in 0..labels.len() {
        let gy = (&y.row(s) - &z.row(s)) * (2.0 * inv_b);
        cot.row_mut(s).assign(&softmax_vjp(y.row(s), gy.view()));
    }
    Ok((loss, backward(net, &trace, cot.view())?))
}

/// Outcome of the two end-to-end gradient comparisons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    /// Unpreconditioned gradient against central differences of the loss.
    pub plain: GradCheckReport,
    /// Preconditioned gradient against central differences of
    /// `Σ w·⟨∂loss/∂p, p(θ)⟩`, with the point weights `w` and the ball-stage
    /// derivatives frozen at the base parameters.
    pub preconditioned: GradCheckReport,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.plain.max_rel_error.max(self.preconditioned.max_rel_error)
    }
}

/// Checks [`backward_hybrid`] in both modes against central differences with step `h`.
pub fn gradcheck(
    net: &DenseNet,
    inputs: [ArrayView2<f64>; 4],
    labels: &[usize],
    cfg: &TrainConfig,
    h: f64,
) -> Result<GradcheckReport> {
    cfg.validate()?;
    let ball = BallConfig::new(net.output_dim(), cfg.r)?;
    let base = BatchPass::run(net, inputs.clone(), labels, cfg, &ball)?;

    let plain_grad = backward_hybrid(net, &base, cfg, &ball, Precondition::Off)?;
    let plain = finite_difference_check(net, &plain_grad, h, |probe| {
        Ok(BatchPass::run(probe, inputs.clone(), labels, cfg, &ball)?.loss)
    })?;

    let w = base.precondition_weights(cfg, Precondition::Metric);
    let cot = base.ball_cotangents(cfg, &ball)?;
    let pre_grad = backward_hybrid(net, &base, cfg, &ball, Precondition::Metric)?;
    let preconditioned = finite_difference_check(net, &pre_grad, h, |probe| {
        let p = BatchPass::run(probe, inputs.clone(), labels, cfg, &ball)?;
        let mut total = 0.0;
        for m in 0..4 {
            for s in 0..p.batch_len() {
                let dot = cot[m].row(s).dot(&p.embeddings[m].points.row(s));
                total += w[m][s] * dot;
            }
        }
        Ok(total)
    })?;
    Ok(GradcheckReport { plain, preconditioned })
}

pub(crate) fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .map(|r| r.iter().enumerate().fold(0, |b, (i, v)| if *v > r[b] { i } else { b }))
        .collect()
}
