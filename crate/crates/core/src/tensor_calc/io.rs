//! Binary dump of a [`MetricField`].
//!
//! Layout (little endian):
//!
//! ```text
//! b"HFMF"  u32 version  u32 dim
//! dim × u64 extents   dim × f64 spacing   dim × f64 origin
//! node_count × u8 mask
//! node_count × dim² × f64 values (row-major node matrices, zeros when masked out)
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use super::field::{Field, MetricField};
use super::grid::GridSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HFMF";
const VERSION: u32 = 1;

pub fn write_metric<W: Write>(metric: &MetricField, mut w: W) -> Result<()> {
    let grid = metric.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    for &e in grid.extents() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for &h in grid.spacing() {
        w.write_all(&h.to_le_bytes())?;
    }
    for &o in grid.origin() {
        w.write_all(&o.to_le_bytes())?;
    }
    let mask: Vec<u8> = grid.mask().iter().map(|&m| m as u8).collect();
    w.write_all(&mask)?;
    for v in metric.field().data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Parse {
            offset: self.offset,
            message: format!("unexpected end of input reading {what}"),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take::<8>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take::<8>(what)?))
    }
}

pub fn read_metric<R: Read>(r: R) -> Result<MetricField> {
    let mut c = Cursor { inner: r, offset: 0 };
    if &c.take::<4>("magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected HFMF".into(),
        });
    }
    let at = c.offset;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: at,
            message: format!("unsupported version {version}"),
        });
    }
    let at = c.offset;
    let dim = c.u32("dim")? as usize;
    if dim == 0 || dim > crate::linalg::MAX_DIM {
        return Err(Error::Parse {
            offset: at,
            message: format!("bad dimension {dim}"),
        });
    }
    let mut extents = Vec::with_capacity(dim);
    for _ in 0..dim {
        let at = c.offset;
        let e = c.u64("extent")?;
        if e == 0 || e > 1 << 20 {
            return Err(Error::Parse {
                offset: at,
                message: format!("implausible extent {e}"),
            });
        }
        extents.push(e as usize);
    }
    let spacing = (0..dim).map(|_| c.f64("spacing")).collect::<Result<Vec<_>>>()?;
    let origin = (0..dim).map(|_| c.f64("origin")).collect::<Result<Vec<_>>>()?;
    let total: usize = extents.iter().product();
    let mut mask = Vec::with_capacity(total);
    for _ in 0..total {
        let at = c.offset;
        match c.take::<1>("mask")?[0] {
            0 => mask.push(false),
            1 => mask.push(true),
            b => {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("mask byte {b} is not 0 or 1"),
                })
            }
        }
    }
    let grid = Arc::new(GridSpec::new(spacing, extents, origin, mask)?);
    let comps = dim * dim;
    let data = (0..total * comps)
        .map(|_| c.f64("values"))
        .collect::<Result<Vec<_>>>()?;
    MetricField::new(Field::from_data(grid, comps, data)?)
}
