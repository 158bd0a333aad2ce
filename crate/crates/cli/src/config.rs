//! Flat, versioned run configuration.
//!
//! Every key is optional in the file and falls back to its default. Values
//! given with `--set key=value` override the file; `--seed` and `--out`
//! override both.

use std::path::{Path, PathBuf};

use hyperflow::datasets::{self, Dataset, ShiftMode, SynthConfig};
use hyperflow::eucl2hyp2eucl::{Arm, FlowBackend, ShiftSpec, TrainConfig};
use hyperflow::nn_engine::Activation;
use hyperflow::ricci_flow::{FlowConfig, RescaleVariant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

/// Ball curvature used by the geometric commands when `r` is not given.
pub const GEOMETRY_R: f64 = 1.0;
/// Ball curvature used by `train` and `compare` when `r` is not given.
pub const TRAINING_R: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Hyperbolic,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synth,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub out: Option<PathBuf>,

    // ball and grid
    pub dim: usize,
    pub r: Option<f64>,
    pub grid_nodes: usize,
    pub grid_spacing: f64,
    pub truncation: f64,

    // flow
    pub variant: RescaleVariant,
    pub dt: Option<f64>,
    pub t_max: f64,
    pub tol: f64,
    pub sample_every: usize,
    pub max_retries: u32,
    pub epsilon_stop: Option<f64>,
    pub bump_amplitude: f64,
    pub bump_radius: f64,

    // curvature
    pub metric: MetricKind,
    pub curvature_tol: f64,

    // dataset
    pub dataset: DatasetKind,
    pub data_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub classes: usize,
    pub noise: f64,
    pub train_path: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,

    // training
    pub arm: Arm,
    pub alpha: f64,
    pub epsilon_target: f64,
    pub k1: i64,
    pub k2: i64,
    pub j1: i64,
    pub j2: i64,
    pub shift_mode: ShiftMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub flow_backend: FlowBackend,
    pub kappa: f64,
    pub flow_tol: f64,
    pub hidden: usize,
    pub activation: Activation,
    pub precondition: bool,
    pub seeds: Vec<u64>,

    // gradcheck
    pub gradcheck_batch: usize,
    pub fd_step: f64,
    pub gradcheck_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let flow = FlowConfig::default();
        let train = TrainConfig::default();
        let synth = SynthConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            out: None,
            dim: 2,
            r: None,
            grid_nodes: 65,
            grid_spacing: 1.0 / 64.0,
            truncation: flow.truncation,
            variant: flow.variant,
            dt: flow.dt,
            t_max: flow.t_max,
            tol: flow.tol,
            sample_every: flow.sample_every,
            max_retries: flow.max_retries,
            epsilon_stop: flow.epsilon_stop,
            bump_amplitude: 0.05,
            bump_radius: 0.4,
            metric: MetricKind::Hyperbolic,
            curvature_tol: 5e-3,
            dataset: DatasetKind::Synth,
            data_seed: synth.seed,
            n_train: synth.n_train,
            n_test: synth.n_test,
            image_size: synth.size,
            classes: synth.classes,
            noise: synth.noise,
            train_path: None,
            train_labels: None,
            test_path: None,
            test_labels: None,
            arm: Arm::Hyperbolic,
            alpha: train.alpha,
            epsilon_target: train.epsilon_target,
            k1: train.shifts.k1,
            k2: train.shifts.k2,
            j1: train.shifts.j1,
            j2: train.shifts.j2,
            shift_mode: train.shift_mode,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr0: train.lr0,
            weight_decay: train.weight_decay,
            grad_clip: train.grad_clip,
            flow_backend: train.flow_backend,
            kappa: train.kappa,
            flow_tol: train.flow_tol,
            hidden: train.hidden,
            activation: train.activation,
            precondition: train.precondition,
            seeds: (0..5).collect(),
            gradcheck_batch: 4,
            fd_step: 1e-5,
            gradcheck_tol: 1e-5,
        }
    }
}

/// Parses `key=value`. The value is read as a TOML literal and falls back
/// to a bare string, so `variant=r_scaled` works without quotes.
fn parse_override(raw: &str) -> CliResult<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {raw:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("--set has an empty key in {raw:?}")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl RunConfig {
    /// Reads the optional file, applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if out.is_some() {
            cfg.out = out;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "unsupported config version {} (this build reads version {CONFIG_VERSION})",
                self.version
            ));
        }
        if !(1..=3).contains(&self.dim) {
            return bad(format!("dim must be 1, 2 or 3, got {}", self.dim));
        }
        if let Some(r) = self.r {
            if !(r >= 0.0) || !r.is_finite() {
                return bad(format!("r must be non-negative, got {r}"));
            }
        }
        if self.grid_nodes < 3 {
            return bad(format!("grid_nodes must be at least 3, got {}", self.grid_nodes));
        }
        if !(self.grid_spacing > 0.0) || !self.grid_spacing.is_finite() {
            return bad(format!("grid_spacing must be positive, got {}", self.grid_spacing));
        }
        if !(self.bump_amplitude >= 0.0) || !(self.bump_radius > 0.0) {
            return bad("bump_amplitude must be >= 0 and bump_radius > 0".into());
        }
        if !(self.curvature_tol > 0.0) {
            return bad(format!("curvature_tol must be positive, got {}", self.curvature_tol));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.gradcheck_batch == 0 || !(self.fd_step > 0.0) || !(self.gradcheck_tol > 0.0) {
            return bad("gradcheck_batch, fd_step and gradcheck_tol must be positive".into());
        }
        let needs = |p: &Option<PathBuf>, key: &str| -> CliResult<()> {
            if p.is_none() {
                return Err(CliError::Config(format!("dataset = {:?} needs {key}", self.dataset)));
            }
            Ok(())
        };
        match self.dataset {
            DatasetKind::Synth => {}
            DatasetKind::Csv => {
                needs(&self.train_path, "train_path")?;
                needs(&self.test_path, "test_path")?;
            }
            DatasetKind::Idx => {
                for (p, k) in [
                    (&self.train_path, "train_path"),
                    (&self.train_labels, "train_labels"),
                    (&self.test_path, "test_path"),
                    (&self.test_labels, "test_labels"),
                ] {
                    needs(p, k)?;
                }
            }
        }
        Ok(())
    }

    /// `r` if set, otherwise the command's default.
    pub fn resolved_r(&self, default: f64) -> f64 {
        self.r.unwrap_or(default)
    }

    pub fn flow_config(&self, r: f64) -> FlowConfig {
        FlowConfig {
            dt: self.dt,
            t_max: self.t_max,
            tol: self.tol,
            truncation: self.truncation,
            variant: self.variant,
            max_retries: self.max_retries,
            sample_every: self.sample_every,
            epsilon_stop: self.epsilon_stop,
            curvature: r,
        }
    }

    pub fn train_config(&self, r: f64) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            r,
            epsilon_target: self.epsilon_target,
            shifts: ShiftSpec {
                k1: self.k1,
                k2: self.k2,
                j1: self.j1,
                j2: self.j2,
            },
            shift_mode: self.shift_mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            seed: self.seed,
            flow_backend: self.flow_backend,
            kappa: self.kappa,
            flow_tol: self.flow_tol,
            hidden: self.hidden,
            activation: self.activation,
            precondition: self.precondition,
        }
    }

    pub fn load_dataset(&self) -> CliResult<Dataset> {
        let classes = Some(self.classes);
        let d = match self.dataset {
            DatasetKind::Synth => datasets::synth_with(&SynthConfig {
                seed: self.data_seed,
                n_train: self.n_train,
                n_test: self.n_test,
                size: self.image_size,
                classes: self.classes,
                noise: self.noise,
            })?,
            DatasetKind::Csv => Dataset::from_splits(
                datasets::load_csv(self.train_path.as_deref().unwrap(), classes)?,
                datasets::load_csv(self.test_path.as_deref().unwrap(), classes)?,
            )?,
            DatasetKind::Idx => Dataset::from_splits(
                datasets::load_idx(
                    self.train_path.as_deref().unwrap(),
                    self.train_labels.as_deref().unwrap(),
                    classes,
                )?,
                datasets::load_idx(
                    self.test_path.as_deref().unwrap(),
                    self.test_labels.as_deref().unwrap(),
                    classes,
                )?,
            )?,
        };
        Ok(d)
    }

    /// Effective configuration as TOML, with `r` filled in.
    pub fn echo(&self, r: f64) -> CliResult<String> {
        let mut shown = self.clone();
        shown.r = Some(r);
        toml::to_string(&shown).map_err(|e| CliError::Config(e.to_string()))
    }
}
