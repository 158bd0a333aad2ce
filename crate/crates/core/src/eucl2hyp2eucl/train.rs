use std::io::Write;

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{argmax_rows, backward_hybrid, euclidean_step, shifted_inputs, BatchPass, Precondition};
use super::TrainConfig;
use crate::datasets::{design_matrix, fit_normalization, Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::geometry::BallConfig;
use crate::nn_engine::{cosine_lr, forward, init_xavier, sgd_step, DenseNet};

pub const EPOCH_CSV_HEADER: &str = "epoch,loss,N,train_acc,test_acc,flow_time,Br_min,Br_mean,Br_max";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Embedding, penalty, flow and preconditioned gradients.
    Hyperbolic,
    /// Plain softmax on the first shifted copy.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl RadiusStats {
    pub fn from_radii(r: &[f64]) -> Option<Self> {
        if r.is_empty() {
            return None;
        }
        Some(Self {
            min: r.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: r.iter().sum::<f64>() / r.len() as f64,
            max: r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// `√(ḡ(dξ, dξ))` per sample and their min/mean/max.
pub fn ball_radius_monitor(metrics: &[DMatrix<f64>], dxi: &[f64]) -> Result<(Vec<f64>, RadiusStats)> {
    let d = nalgebra::DVector::from_column_slice(dxi);
    let radii = metrics
        .iter()
        .map(|g| {
            if g.nrows() != d.len() || g.ncols() != d.len() {
                return Err(Error::Dimension {
                    expected: d.len() * d.len(),
                    got: g.len(),
                });
            }
            let q = d.dot(&(g * &d));
            if !(q > 0.0) {
                return Err(Error::NotPositiveDefinite { node: None });
            }
            Ok(q.sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let stats = RadiusStats::from_radii(&radii).ok_or_else(|| Error::InvalidConfig("no metrics given".into()))?;
    Ok((radii, stats))
}

/// One row per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub n_reg: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean flow time to tolerance over the epoch's batches.
    pub flow_time: f64,
    pub br_min: f64,
    pub br_mean: f64,
    pub br_max: f64,
}

pub fn write_epoch_csv<W: Write>(logs: &[EpochLog], mut w: W) -> Result<()> {
    writeln!(w, "{EPOCH_CSV_HEADER}")?;
    for l in logs {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            l.epoch, l.loss, l.n_reg, l.train_acc, l.test_acc, l.flow_time, l.br_min, l.br_mean, l.br_max
        )?;
    }
    Ok(())
}

/// Network inputs for one split: the four translated copies and the
/// untranslated images, normalized after translation.
#[derive(Debug, Clone)]
pub struct ShiftedInputs {
    pub shifted: [Array2<f64>; 4],
    pub plain: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ShiftedInputs {
    pub fn build(dataset: &Dataset, split: Split, cfg: &TrainConfig) -> Result<Self> {
        let norm = input_normalization(dataset)?;
        let samples = dataset.split(split);
        let shifted = shifted_inputs(&samples, &cfg.shifts, cfg.shift_mode, norm);
        let mut plain = design_matrix(&samples);
        if let Some(n) = norm {
            plain.mapv_inplace(|v| n.apply(v));
        }
        let labels = samples.iter().map(|s| s.label).collect();
        Ok(Self { shifted, plain, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Raw datasets are standardized with train statistics; already
/// normalized ones are used as they are.
fn input_normalization(dataset: &Dataset) -> Result<Option<Normalization>> {
    if dataset.normalization().is_some() {
        Ok(None)
    } else {
        fit_normalization(dataset).map(Some)
    }
}

fn accuracy(net: &DenseNet, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let (out, _) = forward(net, x.view())?;
    let hits = argmax_rows(&out).iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Classification accuracy on untranslated images of `split`. The log map
/// preserves directions, so the prediction is the argmax of the network output.
pub fn evaluate(net: &DenseNet, dataset: &Dataset, split: Split) -> Result<f64> {
    let norm = input_normalization(dataset)?;
    let samples = dataset.split(split);
    let mut x = design_matrix(&samples);
    if let Some(n) = norm {
        x.mapv_inplace(|v| n.apply(v));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    accuracy(net, &x, &labels)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub net: DenseNet,
    pub logs: Vec<EpochLog>,
}

/// Trains `net` for `cfg.epochs` epochs of minibatch SGD with a cosine
/// learning-rate schedule.
pub fn train(net: DenseNet, dataset: &Dataset, cfg: &TrainConfig, arm: Arm) -> Result<TrainRun> {
    cfg.validate()?;
    if net.input_dim() != dataset.pixel_count() || net.output_dim() != dataset.num_classes() {
        return Err(Error::Dimension {
            expected: dataset.pixel_count(),
            got: net.input_dim(),
        });
    }
    let train_in = ShiftedInputs::build(dataset, Split::Train, cfg)?;
    let test_in = ShiftedInputs::build(dataset, Split::Test, cfg)?;
    train_prepared(net, &train_in, &test_in, cfg, arm)
}

pub(crate) fn train_prepared(
    mut net: DenseNet,
    train_in: &ShiftedInputs,
    test_in: &ShiftedInputs,
    cfg: &TrainConfig,
    arm: Arm,
) -> Result<TrainRun> {
    let ball = BallConfig::new(net.output_dim(), cfg.r)?;
    let mode = if cfg.precondition {
        Precondition::Metric
    } else {
        Precondition::Off
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_in.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let diverged = |epoch: usize, reason: String, logs: &Vec<EpochLog>| Error::Divergence {
        epoch,
        reason,
        logs: logs.clone(),
    };

    for e in 0..cfg.epochs {
        let epoch = e + 1;
        let lr = cosine_lr(e, cfg.epochs, cfg.lr0);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_sum, mut flow_sum) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        let mut radii = Vec::with_capacity(train_in.len());
        for chunk in order.chunks(cfg.batch_size) {
            let x: [Array2<f64>; 4] = std::array::from_fn(|m| train_in.shifted[m].select(Axis(0), chunk));
            let labels: Vec<usize> = chunk.iter().map(|&i| train_in.labels[i]).collect();
            let views = [x[0].view(), x[1].view(), x[2].view(), x[3].view()];
            let pass = BatchPass::run(&net, views, &labels, cfg, &ball)
                .map_err(|err| diverged(epoch, err.to_string(), &logs))?;
            let (loss, mut grads) = match arm {
                Arm::Hyperbolic => (pass.loss, backward_hybrid(&net, &pass, cfg, &ball, mode)?),
                Arm::Euclidean => euclidean_step(&net, x[0].view(), &labels)?,
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(epoch, format!("non-finite loss or gradient (loss = {loss})"), &logs));
            }
            grads.clip_norm(cfg.grad_clip);
            sgd_step(&mut net, &grads, lr, cfg.weight_decay);
            let w = chunk.len() as f64;
            loss_sum += loss * w;
            n_sum += pass.n_reg * w;
            flow_sum += pass.flow.time;
            batches += 1;
            for s in 0..chunk.len() {
                radii.push((0.5 * pass.perturbation.u[s]).exp() * pass.embeddings[0].lambda[s]);
            }
        }
        let total = train_in.len().max(1) as f64;
        let br = RadiusStats::from_radii(&radii).unwrap_or(RadiusStats {
            min: 0.0,
            mean: 0.0,
            max: 0.0,
        });
        logs.push(EpochLog {
            epoch,
            loss: loss_sum / total,
            n_reg: n_sum / total,
            train_acc: accuracy(&net, &train_in.plain, &train_in.labels)?,
            test_acc: accuracy(&net, &test_in.plain, &test_in.labels)?,
            flow_time: flow_sum / batches.max(1) as f64,
            br_min: br.min,
            br_mean: br.mean,
            br_max: br.max,
        });
    }
    Ok(TrainRun { net, logs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub train_acc: f64,
    pub test_acc: f64,
    pub logs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub hyperbolic: ArmOutcome,
    pub euclidean: ArmOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub test_mean: f64,
    pub test_std: f64,
    pub train_mean: f64,
    pub train_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub pairs: Vec<SeedPair>,
    pub hyperbolic: ArmSummary,
    pub euclidean: ArmSummary,
    /// Mean of `hyperbolic − euclidean` test accuracy.
    pub gap_mean: f64,
    pub gap_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn summarize(outcomes: &[&ArmOutcome]) -> ArmSummary {
    let test: Vec<f64> = outcomes.iter().map(|o| o.test_acc).collect();
    let train: Vec<f64> = outcomes.iter().map(|o| o.train_acc).collect();
    let (test_mean, test_std) = mean_std(&test);
    let (train_mean, train_std) = mean_std(&train);
    ArmSummary {
        test_mean,
        test_std,
        train_mean,
        train_std,
    }
}

/// Trains both arms from the same initial network, data order and learning
/// rate schedule for every seed.
pub fn run_comparison(dataset: &Dataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<ComparisonReport> {
    cfg.validate()?;
    let train_in = ShiftedInputs::build(dataset, Split::Train, cfg)?;
    let test_in = ShiftedInputs::build(dataset, Split::Test, cfg)?;
    let dims = [dataset.pixel_count(), cfg.hidden, dataset.num_classes()];
    let pairs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let net = init_xavier(&dims, cfg.activation, seed)?;
            let arm = |a: Arm| -> Result<ArmOutcome> {
                let run = train_prepared(net.clone(), &train_in, &test_in, &cfg, a)?;
                let last = run.logs.last();
                Ok(ArmOutcome {
                    train_acc: last.map_or(0.0, |l| l.train_acc),
                    test_acc: last.map_or(0.0, |l| l.test_acc),
                    logs: run.logs,
                })
            };
            let (h, e) = rayon::join(|| arm(Arm::Hyperbolic), || arm(Arm::Euclidean));
            Ok(SeedPair {
                seed,
                hyperbolic: h?,
                euclidean: e?,
            })
        })
        .collect::<Result<Vec<SeedPair>>>()?;
    let hyperbolic = summarize(&pairs.iter().map(|p| &p.hyperbolic).collect::<Vec<_>>());
    let euclidean = summarize(&pairs.iter().map(|p| &p.euclidean).collect::<Vec<_>>());
    let gaps: Vec<f64> = pairs
        .iter()
        .map(|p| p.hyperbolic.test_acc - p.euclidean.test_acc)
        .collect();
    let (gap_mean, gap_std) = mean_std(&gaps);
    Ok(ComparisonReport {
        pairs,
        hyperbolic,
        euclidean,
        gap_mean,
        gap_std,
    })
}
