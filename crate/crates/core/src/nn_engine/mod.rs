//! A small dense feed-forward network with reverse-mode gradients.
//!
//! Rows of a batch are samples. Layer `l` maps `a ↦ σ_l(a θ_l + b_l)` with
//! `θ_l` of shape `fan_in × fan_out`; the last activation is the identity so
//! the network returns pre-softmax scores.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::Dimension {
                    expected: l.weight.ncols(),
                    got: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::Dimension {
                    expected: layers[i - 1].weight.ncols(),
                    got: l.weight.nrows(),
                });
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::InvalidConfig("the final activation must be the identity".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Dimension {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = p[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[k];
                k += 1;
            }
        }
        Ok(())
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Array2<f64> {
        &self.input
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn activations(&self) -> &[Array2<f64>] {
        &self.post
    }
}

/// Per-layer weight and bias gradients mirroring a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    /// `self += c·other`.
    pub fn add_scaled(&mut self, other: &GradientSet, c: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(c, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(c, b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.weights {
            *a *= c;
        }
        for a in &mut self.biases {
            *a *= c;
        }
    }

    /// Flattened in the same order as [`DenseNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales to norm `max_norm` when larger. Returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Uniform Xavier initialisation in `±sqrt(6/(fan_in+fan_out))`, zero biases.
/// `dims` lists layer widths from input to output; hidden layers use `hidden`.
pub fn init_xavier(dims: &[usize], hidden: Activation, seed: u64) -> Result<DenseNet> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!("bad layer widths {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, w) in dims.windows(2).enumerate() {
        let (fi, fo) = (w[0], w[1]);
        let a = (6.0 / (fi + fo) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        let weight = Array2::from_shape_fn((fi, fo), |_| dist.sample(&mut rng));
        let activation = if i + 2 == dims.len() {
            Activation::Identity
        } else {
            hidden
        };
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fo),
            activation,
        });
    }
    DenseNet::new(layers)
}

pub fn forward(net: &DenseNet, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace)> {
    if batch.ncols() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: batch.ncols(),
        });
    }
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post = Vec::with_capacity(net.layers.len());
    let mut a = batch.to_owned();
    for l in &net.layers {
        let z = a.dot(&l.weight) + &l.bias;
        a = z.mapv(|v| l.activation.apply(v));
        pre.push(z);
        post.push(a.clone());
    }
    Ok((
        a,
        ForwardTrace {
            input: batch.to_owned(),
            pre,
            post,
        },
    ))
}

/// Max-subtracted softmax of one score vector.
pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let m = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = x.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Row-wise softmax.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        out.row_mut(i).assign(&softmax(row));
    }
    out
}

/// Pullback of a cotangent `v` on the scores through the softmax at `y`.
pub fn softmax_vjp(y: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    let dot = y.dot(&v);
    let mut out = y.to_owned();
    out.zip_mut_with(&v, |yi, vi| *yi *= vi - dot);
    out
}

/// Reverse-mode gradients of `Σ output_grad ⊙ net(batch)` with respect to
/// every parameter. No batch averaging happens here.
pub fn backward(net: &DenseNet, trace: &ForwardTrace, output_grad: ArrayView2<f64>) -> Result<GradientSet> {
    let out = trace.post.last().unwrap();
    if output_grad.raw_dim() != out.raw_dim() {
        return Err(Error::Dimension {
            expected: out.len(),
            got: output_grad.len(),
        });
    }
    Ok(backward_full(net, trace, output_grad).0)
}

/// Like [`backward`] but also returns the cotangent on the network input.
pub fn backward_full(
    net: &DenseNet,
    trace: &ForwardTrace,
    output_grad: ArrayView2<f64>,
) -> (GradientSet, Array2<f64>) {
    let mut grads = GradientSet::zeros_like(net);
    let mut delta = output_grad.to_owned();
    for li in (0..net.layers.len()).rev() {
        let layer = &net.layers[li];
        let z = &trace.pre[li];
        let a = &trace.post[li];
        ndarray::Zip::from(&mut delta)
            .and(z)
            .and(a)
            .for_each(|d, &zv, &av| *d *= layer.activation.derivative(zv, av));
        let input = if li == 0 { &trace.input } else { &trace.post[li - 1] };
        grads.weights[li] = input.t().dot(&delta);
        grads.biases[li] = delta.sum_axis(Axis(0));
        delta = delta.dot(&layer.weight.t());
    }
    (grads, delta)
}

/// `θ ← θ − lr·(grad + weight_decay·θ)`; biases skip the decay term.
pub fn sgd_step(net: &mut DenseNet, grads: &GradientSet, lr: f64, weight_decay: f64) {
    for (l, (gw, gb)) in net.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
        ndarray::Zip::from(&mut l.weight)
            .and(gw)
            .for_each(|w, &g| *w -= lr * (g + weight_decay * *w));
        l.bias.scaled_add(-lr, gb);
    }
}

/// `lr0·(1 + cos(π·epoch/total))/2`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let e = epoch.min(total) as f64;
    let v = lr0 * 0.5 * (1.0 + (std::f64::consts::PI * e / total as f64).cos());
    if epoch >= total {
        0.0
    } else {
        v
    }
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub params: usize,
}

/// Floor on the denominator of the relative error, as a fraction of the
/// largest analytic gradient entry.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Compares `analytic` against central differences of `loss` with step `h`.
///
/// The relative error is `|a − d| / max(|a|, |d|, 1e-3·max|a|)`.
pub fn finite_difference_check(
    net: &DenseNet,
    analytic: &GradientSet,
    h: f64,
    mut loss: impl FnMut(&DenseNet) -> Result<f64>,
) -> Result<GradCheckReport> {
    let base = net.params();
    let a = analytic.flat();
    if a.len() != base.len() {
        return Err(Error::Dimension {
            expected: base.len(),
            got: a.len(),
        });
    }
    let floor = GRADCHECK_FLOOR * a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        params: base.len(),
    };
    let mut p = base.clone();
    for k in 0..base.len() {
        p[k] = base[k] + h;
        probe.set_params(&p)?;
        let up = loss(&probe)?;
        p[k] = base[k] - h;
        probe.set_params(&p)?;
        let down = loss(&probe)?;
        p[k] = base[k];
        let d = (up - down) / (2.0 * h);
        let rel = (a[k] - d).abs() / a[k].abs().max(d.abs()).max(floor);
        if rel > report.max_rel_error || k == 0 {
            report.max_rel_error = rel;
            report.worst_index = k;
            report.analytic = a[k];
            report.numeric = d;
        }
    }
    Ok(report)
}
