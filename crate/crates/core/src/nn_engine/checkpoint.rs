//! Text checkpoints. Floats are written with Rust's shortest round-trip
//! formatting, so a save/load cycle is exact.
//!
//! ```text
//! hyperflow-net 1
//! layers <L>
//! layer <fan_in> <fan_out> <activation>
//! <fan_in lines of fan_out weights>
//! <one line of fan_out biases>
//! ...
//! ```

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "hyperflow-net 1";

pub fn save_checkpoint<W: Write>(net: &DenseNet, mut w: W) -> Result<()> {
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    writeln!(w, "layers {}", net.layers().len())?;
    for l in net.layers() {
        writeln!(w, "layer {} {} {}", l.weight.nrows(), l.weight.ncols(), l.activation.tag())?;
        for row in l.weight.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        let line: Vec<String> = l.bias.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: R,
    offset: u64,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<(u64, String)> {
        self.buf.clear();
        let at = self.offset;
        let n = self.inner.read_line(&mut self.buf)?;
        if n == 0 {
            return Err(Error::Parse {
                offset: at,
                message: "unexpected end of checkpoint".into(),
            });
        }
        self.offset += n as u64;
        Ok((at, self.buf.trim_end().to_string()))
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let (at, line) = self.next()?;
        let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == count => Ok(v),
            Ok(v) => Err(Error::Parse {
                offset: at,
                message: format!("expected {count} values, found {}", v.len()),
            }),
            Err(e) => Err(Error::Parse {
                offset: at,
                message: format!("bad number: {e}"),
            }),
        }
    }
}

fn parse_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

pub fn load_checkpoint<R: BufRead>(r: R) -> Result<DenseNet> {
    let mut lines = Lines {
        inner: r,
        offset: 0,
        buf: String::new(),
    };
    let (at, header) = lines.next()?;
    if header != CHECKPOINT_HEADER {
        return Err(parse_err(at, format!("unknown header {header:?}")));
    }
    let (at, line) = lines.next()?;
    let count: usize = line
        .strip_prefix("layers ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(at, "expected `layers <count>`"))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let (at, line) = lines.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (fi, fo, act) = match parts.as_slice() {
            ["layer", fi, fo, act] => (
                fi.parse::<usize>().map_err(|_| parse_err(at, "bad fan_in"))?,
                fo.parse::<usize>().map_err(|_| parse_err(at, "bad fan_out"))?,
                Activation::from_tag(act).ok_or_else(|| parse_err(at, format!("unknown activation {act}")))?,
            ),
            _ => return Err(parse_err(at, "expected `layer <fan_in> <fan_out> <activation>`")),
        };
        let mut weight = Vec::with_capacity(fi * fo);
        for _ in 0..fi {
            weight.extend(lines.floats(fo)?);
        }
        let bias = lines.floats(fo)?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((fi, fo), weight).expect("shape checked"),
            bias: Array1::from_vec(bias),
            activation: act,
        });
    }
    DenseNet::new(layers)
}
