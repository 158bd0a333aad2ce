//! Small image-classification datasets: a seeded synthetic pattern task plus
//! CSV and IDX loaders.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod io;
mod synth;

pub use io::{load_csv, load_idx, read_idx, write_csv, write_idx, write_metadata};
pub use synth::{synth_generate, synth_with, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    /// Unique within a dataset; used to verify split disjointness.
    pub id: u64,
    pub pixels: Array2<f64>,
    pub label: usize,
    pub split: Split,
}

/// Train-split pixel statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    num_classes: usize,
    height: usize,
    width: usize,
    normalization: Option<Normalization>,
    metadata: Option<serde_json::Value>,
}

impl Dataset {
    pub fn new(samples: Vec<ImageSample>, num_classes: usize) -> Result<Self> {
        let (height, width) = samples
            .first()
            .map(|s| s.pixels.dim())
            .ok_or_else(|| Error::InvalidConfig("dataset has no samples".into()))?;
        let mut ids = std::collections::HashSet::new();
        for s in &samples {
            if s.pixels.dim() != (height, width) {
                return Err(Error::Dimension {
                    expected: height * width,
                    got: s.pixels.len(),
                });
            }
            if s.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: num_classes,
                });
            }
            if !ids.insert(s.id) {
                return Err(Error::InvalidConfig(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            height,
            width,
            normalization: None,
            metadata: None,
        })
    }

    /// Joins separately loaded train and test samples, re-tagging their splits
    /// and renumbering ids.
    pub fn from_splits(train: Dataset, test: Dataset) -> Result<Self> {
        let classes = train.num_classes.max(test.num_classes);
        let mut samples = Vec::with_capacity(train.len() + test.len());
        for (split, part) in [(Split::Train, train.samples), (Split::Test, test.samples)] {
            for mut s in part {
                s.split = split;
                s.id = samples.len() as u64;
                samples.push(s);
            }
        }
        Self::new(samples, classes)
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization
    }

    pub fn split(&self, split: Split) -> Vec<&ImageSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    /// Per-class counts within a split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for s in self.samples.iter().filter(|s| s.split == split) {
            c[s.label] += 1;
        }
        c
    }

    /// `true` when no sample id appears in two splits.
    pub fn splits_disjoint(&self) -> bool {
        let mut seen = std::collections::HashMap::new();
        self.samples
            .iter()
            .all(|s| *seen.entry(s.id).or_insert(s.split) == s.split)
    }

    pub fn map_pixels(&self, f: impl Fn(&Array2<f64>) -> Array2<f64>) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.pixels = f(&s.pixels);
        }
        out
    }
}

/// Train-split mean and standard deviation over all pixels (single channel).
pub fn fit_normalization(dataset: &Dataset) -> Result<Normalization> {
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::InvalidConfig("normalization needs a non-empty train split".into()));
    }
    let count = (train.len() * dataset.pixel_count()) as f64;
    let mean = train.iter().flat_map(|s| s.pixels.iter()).sum::<f64>() / count;
    let var = train
        .iter()
        .flat_map(|s| s.pixels.iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / count;
    if !(var > 0.0) {
        return Err(Error::InvalidConfig("train pixels have zero variance".into()));
    }
    Ok(Normalization { mean, std: var.sqrt() })
}

/// Standardizes every split with train-split statistics.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    let n = fit_normalization(dataset)?;
    let mut out = dataset.map_pixels(|p| p.mapv(|v| n.apply(v)));
    out.normalization = Some(n);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    #[default]
    ZeroPad,
    Circular,
}

/// Moves content `dk` rows down and `dj` columns right.
pub fn translate(img: &Array2<f64>, dk: i64, dj: i64, mode: ShiftMode) -> Array2<f64> {
    let (h, w) = img.dim();
    let (hi, wi) = (h as i64, w as i64);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (si, sj) = (i as i64 - dk, j as i64 - dj);
        match mode {
            ShiftMode::ZeroPad => {
                if si < 0 || si >= hi || sj < 0 || sj >= wi {
                    0.0
                } else {
                    img[[si as usize, sj as usize]]
                }
            }
            ShiftMode::Circular => img[[si.rem_euclid(hi) as usize, sj.rem_euclid(wi) as usize]],
        }
    })
}

/// Stacks flattened pixels (row-major) into a `samples × pixels` matrix.
pub fn design_matrix(samples: &[&ImageSample]) -> Array2<f64> {
    let cols = samples.first().map_or(0, |s| s.pixels.len());
    let mut m = Array2::zeros((samples.len(), cols));
    for (mut row, s) in m.rows_mut().into_iter().zip(samples) {
        row.iter_mut().zip(s.pixels.iter()).for_each(|(d, v)| *d = *v);
    }
    m
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            std::fs::create_dir_all(p)?;
        }
    }
    Ok(())
}
