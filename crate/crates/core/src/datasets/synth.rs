use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageSample, Split};
use crate::error::{Error, Result};

/// Generator settings; embedded in the dataset metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub size: usize,
    pub classes: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 2000,
            n_test: 500,
            size: 12,
            classes: 4,
            noise: 0.05,
        }
    }
}

/// Seeded translated-pattern task: horizontal, vertical and diagonal strokes
/// plus a Gaussian blob, each at a random offset with additive noise.
pub fn synth_generate(seed: u64, n_train: usize, n_test: usize, size: usize, classes: usize) -> Result<Dataset> {
    synth_with(&SynthConfig {
        seed,
        n_train,
        n_test,
        size,
        classes,
        ..SynthConfig::default()
    })
}

pub fn synth_with(cfg: &SynthConfig) -> Result<Dataset> {
    if !(2..=4).contains(&cfg.classes) {
        return Err(Error::InvalidConfig(format!("classes must be in 2..=4, got {}", cfg.classes)));
    }
    if cfg.size < 8 {
        return Err(Error::InvalidConfig(format!("image size must be at least 8, got {}", cfg.size)));
    }
    for (name, n) in [("n_train", cfg.n_train), ("n_test", cfg.n_test)] {
        if n % cfg.classes != 0 {
            return Err(Error::InvalidConfig(format!(
                "{name} = {n} is not divisible by {} classes",
                cfg.classes
            )));
        }
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::InvalidConfig("noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).expect("finite non-negative sigma");
    let mut samples = Vec::with_capacity(cfg.n_train + cfg.n_test);
    for (split, n) in [(Split::Train, cfg.n_train), (Split::Test, cfg.n_test)] {
        let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
        labels.shuffle(&mut rng);
        for label in labels {
            let mut img = pattern(label, cfg.size, &mut rng);
            img.mapv_inplace(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0));
            samples.push(ImageSample {
                id: samples.len() as u64,
                pixels: img,
                label,
                split,
            });
        }
    }
    let meta = serde_json::to_value(cfg)?;
    Ok(Dataset::new(samples, cfg.classes)?.with_metadata(meta))
}

fn pattern(label: usize, size: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut img = Array2::zeros((size, size));
    let amp = rng.gen_range(0.6..1.0);
    let len = rng.gen_range(size / 2..=size - 3);
    match label {
        0 | 1 => {
            let thick = rng.gen_range(1..=2);
            let across = rng.gen_range(0..=size - thick);
            let along = rng.gen_range(0..=size - len);
            for t in 0..thick {
                for s in 0..len {
                    let (i, j) = if label == 0 {
                        (across + t, along + s)
                    } else {
                        (along + s, across + t)
                    };
                    img[[i, j]] = amp;
                }
            }
        }
        2 => {
            let i0 = rng.gen_range(0..=size - len);
            let j0 = rng.gen_range(0..=size - len);
            for s in 0..len {
                img[[i0 + s, j0 + s]] = amp;
            }
        }
        _ => {
            let sigma: f64 = rng.gen_range(0.9..1.5);
            let lo = 2.0;
            let hi = size as f64 - 3.0;
            let ci = rng.gen_range(lo..hi);
            let cj = rng.gen_range(lo..hi);
            for ((i, j), v) in img.indexed_iter_mut() {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                *v = amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    img
}
