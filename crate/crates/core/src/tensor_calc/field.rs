use std::sync::Arc;

use rayon::prelude::*;

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, MAX_SQ};

/// Per-node real components on a grid. Masked-out nodes hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<GridSpec>,
    comps: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Arc<GridSpec>, comps: usize) -> Self {
        let data = vec![0.0; grid.node_count() * comps];
        Self { grid, comps, data }
    }

    pub fn from_data(grid: Arc<GridSpec>, comps: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() * comps {
            return Err(Error::Dimension {
                expected: grid.node_count() * comps,
                got: data.len(),
            });
        }
        Ok(Self { grid, comps, data })
    }

    /// Sample `f(coords, out)` at every masked-in node.
    pub fn from_fn(grid: Arc<GridSpec>, comps: usize, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Self {
        let mut field = Self::zeros(grid, comps);
        let g = field.grid.clone();
        let dim = g.dim();
        field
            .data
            .par_chunks_mut(comps)
            .enumerate()
            .for_each(|(node, out)| {
                if g.is_inside(node) {
                    let x = g.coords(node);
                    f(&x[..dim], out);
                }
            });
        field
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.data[node * self.comps..(node + 1) * self.comps]
    }

    pub fn node_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.comps..(node + 1) * self.comps]
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Pointwise linear combination `a*self + b*other`.
    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.check_same_grid(other)?;
        if self.comps != other.comps {
            return Err(Error::Dimension {
                expected: self.comps,
                got: other.comps,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Field {
            grid: self.grid.clone(),
            comps: self.comps,
            data,
        })
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            comps: self.comps,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Max absolute component over masked-in nodes (optionally interior only).
    pub fn sup_abs(&self, interior_only: bool) -> f64 {
        let mut m: f64 = 0.0;
        for node in 0..self.grid.node_count() {
            let keep = if interior_only {
                self.grid.is_interior(node)
            } else {
                self.grid.is_inside(node)
            };
            if keep {
                for v in self.node(node) {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }
}

/// Fill a new field node by node in parallel. The kernel returns `false` to
/// flag a failure; the lowest failing node index is reported.
pub(crate) fn par_fill(
    grid: &Arc<GridSpec>,
    comps: usize,
    kernel: impl Fn(usize, &mut [f64]) -> bool + Sync,
) -> std::result::Result<Field, usize> {
    let mut out = Field::zeros(grid.clone(), comps);
    let failed = out
        .data
        .par_chunks_mut(comps)
        .enumerate()
        .filter_map(|(node, chunk)| {
            if !grid.is_inside(node) || kernel(node, chunk) {
                None
            } else {
                Some(node)
            }
        })
        .min();
    match failed {
        Some(node) => Err(node),
        None => Ok(out),
    }
}

/// A symmetric positive-definite matrix field (n×n per node, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField(Field);

impl MetricField {
    pub fn new(field: Field) -> Result<Self> {
        let n = field.grid.dim();
        if field.comps != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: field.comps,
            });
        }
        let grid = field.grid.clone();
        let bad = (0..grid.node_count())
            .into_par_iter()
            .filter(|&node| {
                if !grid.is_inside(node) {
                    return false;
                }
                let m = field.node(node);
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for i in 0..n {
                    for j in 0..i {
                        if (m[i * n + j] - m[j * n + i]).abs() > 1e-12 * scale {
                            return true;
                        }
                    }
                }
                let mut l = [0.0; MAX_SQ];
                !linalg::cholesky(n, m, &mut l)
            })
            .min();
        if let Some(node) = bad {
            return Err(Error::NotPositiveDefinite { node: Some(node) });
        }
        Ok(Self(field))
    }

    /// Sample a metric `f(coords, out)` at every masked-in node.
    pub fn from_fn(grid: Arc<GridSpec>, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Result<Self> {
        let n = grid.dim();
        Self::new(Field::from_fn(grid, n * n, f))
    }

    pub fn identity(grid: Arc<GridSpec>) -> Self {
        let n = grid.dim();
        Self(Field::from_fn(grid, n * n, |_, out| {
            for i in 0..n {
                out[i * n + i] = 1.0;
            }
        }))
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.0.grid()
    }

    pub fn dim(&self) -> usize {
        self.0.grid.dim()
    }

    pub fn node(&self, node: usize) -> &[f64] {
        self.0.node(node)
    }

    /// `c * self` for a constant `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::NotPositiveDefinite { node: None });
        }
        Ok(Self(self.0.scaled(c)))
    }

    /// Pointwise conformal rescaling `s(x) * self`, `s` positive.
    pub fn conformal(&self, s: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let g = self.0.grid.clone();
        let dim = g.dim();
        let mut f = self.0.clone();
        f.data
            .par_chunks_mut(self.0.comps)
            .enumerate()
            .for_each(|(node, out)| {
                if g.is_inside(node) {
                    let x = g.coords(node);
                    let c = s(&x[..dim]);
                    for v in out.iter_mut() {
                        *v *= c;
                    }
                }
            });
        Self::new(f)
    }
}

/// `Γ^k_{ij}` per node, stored `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelField(pub(crate) Field);

impl ChristoffelField {
    pub fn field(&self) -> &Field {
        &self.0
    }

    /// `Γ^k_{ij}` at a node.
    pub fn get(&self, node: usize, k: usize, i: usize, j: usize) -> f64 {
        let n = self.0.grid.dim();
        self.0.node(node)[(k * n + i) * n + j]
    }
}

/// Riemann `R^l_{ijk}` (stored `[l][i][j][k]`), Ricci `R_{ij}` and scalar curvature.
#[derive(Debug, Clone)]
pub struct CurvatureFields {
    pub riemann: Field,
    pub ricci: Field,
    pub scalar: Field,
}
