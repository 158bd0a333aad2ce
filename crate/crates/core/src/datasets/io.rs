use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ensure_parent, Dataset, ImageSample, Split};
use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Writes `label,p0,p1,...` rows (row-major pixels) for every sample.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.pixel_count()).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for s in dataset.samples() {
        let mut row = vec![s.label.to_string()];
        row.extend(s.pixels.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a square-image CSV. All rows become train samples; the class count
/// is `classes` when given, else one past the largest label.
pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::Parse {
            offset: 0,
            message: "first column must be `label`".into(),
        });
    }
    let pixels = header.len() - 1;
    let side = (pixels as f64).sqrt().round() as usize;
    if side * side != pixels || side == 0 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("{pixels} pixel columns do not form a square image"),
        });
    }
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let bad = |message: String| Error::Parse { offset, message };
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad label `{}`", &rec[0])))?;
        let mut data = Vec::with_capacity(pixels);
        for f in rec.iter().skip(1) {
            let v: f64 = f.trim().parse().map_err(|_| bad(format!("bad pixel `{f}`")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("pixel {v} outside [0, 1]")));
            }
            data.push(v);
        }
        let pixels = Array2::from_shape_vec((side, side), data).expect("record length checked by csv");
        samples.push(ImageSample {
            id: samples.len() as u64,
            pixels,
            label,
            split: Split::Train,
        });
    }
    let classes = classes.unwrap_or_else(|| samples.iter().map(|s| s.label + 1).max().unwrap_or(0));
    Dataset::new(samples, classes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}: need {n} bytes, have {}", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Parses an IDX image file and its label file. Pixels are scaled by 1/255.
pub fn read_idx(images: &[u8], labels: &[u8]) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    let mut c = Cursor { bytes: images, pos: 0 };
    let magic = c.u32("image magic")?;
    if magic != IDX_IMAGES {
        return Err(Error::Parse {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        });
    }
    let n = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let mut imgs = Vec::with_capacity(n);
    for i in 0..n {
        let raw = c.take(rows * cols, &format!("image {i}"))?;
        let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
        imgs.push(Array2::from_shape_vec((rows, cols), data).expect("slice length is rows*cols"));
    }

    let mut c = Cursor { bytes: labels, pos: 0 };
    let magic = c.u32("label magic")?;
    if magic != IDX_LABELS {
        return Err(Error::Parse {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        });
    }
    let m = c.u32("label count")? as usize;
    if m != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{m} labels for {n} images"),
        });
    }
    let labs = c.take(n, "labels")?.iter().map(|&b| b as usize).collect();
    Ok((imgs, labs))
}

/// Loads an IDX image/label pair as train samples.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let (imgs, labs) = read_idx(&read_all(images)?, &read_all(labels)?)?;
    let classes = classes.unwrap_or_else(|| labs.iter().map(|l| l + 1).max().unwrap_or(0));
    let samples = imgs
        .into_iter()
        .zip(labs)
        .enumerate()
        .map(|(i, (pixels, label))| ImageSample {
            id: i as u64,
            pixels,
            label,
            split: Split::Train,
        })
        .collect();
    Dataset::new(samples, classes)
}

/// Writes all samples as an IDX pair, quantizing pixels to `round(255 v)`.
pub fn write_idx(dataset: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let (h, w) = dataset.shape();
    let n = dataset.len() as u32;
    ensure_parent(images)?;
    ensure_parent(labels)?;
    let mut f = BufWriter::new(File::create(images)?);
    for v in [IDX_IMAGES, n, h as u32, w as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    for s in dataset.samples() {
        let bytes: Vec<u8> = s.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        f.write_all(&bytes)?;
    }
    f.flush()?;
    let mut f = BufWriter::new(File::create(labels)?);
    for v in [IDX_LABELS, n] {
        f.write_all(&v.to_be_bytes())?;
    }
    for s in dataset.samples() {
        let l = u8::try_from(s.label).map_err(|_| Error::LabelOutOfRange {
            label: s.label,
            classes: 256,
        })?;
        f.write_all(&[l])?;
    }
    f.flush()?;
    Ok(())
}

/// Writes the dataset's metadata (generator config, counts) as pretty JSON.
pub fn write_metadata(dataset: &Dataset, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut doc = serde_json::json!({
        "num_classes": dataset.num_classes(),
        "height": dataset.shape().0,
        "width": dataset.shape().1,
        "train": dataset.count(Split::Train),
        "val": dataset.count(Split::Val),
        "test": dataset.count(Split::Test),
    });
    if let Some(m) = dataset.metadata() {
        doc["generator"] = m.clone();
    }
    if let Some(n) = dataset.normalization() {
        doc["normalization"] = serde_json::to_value(n)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &doc)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
