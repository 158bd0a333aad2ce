use crate::error::{Error, Result};
use crate::geometry::BallConfig;
use crate::linalg::MAX_DIM;

/// A regular node grid with a mask selecting the computational domain.
///
/// Nodes are stored row-major (last axis fastest). A masked-in node is a
/// *boundary* node when any node of its `3^n` neighbourhood (diagonals
/// included) is masked out or off the grid; every other masked-in node is
/// *interior* and supports compact centred stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dim: usize,
    spacing: Vec<f64>,
    extents: Vec<usize>,
    origin: Vec<f64>,
    mask: Vec<bool>,
    boundary: Vec<bool>,
    strides: Vec<usize>,
}

impl GridSpec {
    pub fn new(spacing: Vec<f64>, extents: Vec<usize>, origin: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let dim = extents.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::DegenerateGrid(format!("grid dimension {dim} not in 1..={MAX_DIM}")));
        }
        if spacing.len() != dim || origin.len() != dim {
            return Err(Error::DegenerateGrid("spacing/origin length must match extents".into()));
        }
        if let Some(e) = extents.iter().find(|&&e| e < 3) {
            return Err(Error::DegenerateGrid(format!("need at least 3 nodes per axis, got {e}")));
        }
        if spacing.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::DegenerateGrid("spacing must be positive".into()));
        }
        let total: usize = extents.iter().product();
        if mask.len() != total {
            return Err(Error::DegenerateGrid(format!(
                "mask has {} entries for {} nodes",
                mask.len(),
                total
            )));
        }
        let mut strides = vec![1; dim];
        for a in (0..dim - 1).rev() {
            strides[a] = strides[a + 1] * extents[a + 1];
        }
        let mut grid = Self {
            dim,
            spacing,
            extents,
            origin,
            mask,
            boundary: vec![false; total],
            strides,
        };
        grid.boundary = (0..total)
            .map(|node| grid.mask[node] && grid.touches_outside(node))
            .collect();
        grid.validate()?;
        Ok(grid)
    }

    /// Every node of a full box is masked in.
    pub fn full_box(dim: usize, nodes_per_axis: usize, spacing: f64) -> Result<Self> {
        let total = nodes_per_axis.pow(dim as u32);
        let half = (nodes_per_axis as f64 - 1.0) * 0.5 * spacing;
        Self::new(
            vec![spacing; dim],
            vec![nodes_per_axis; dim],
            vec![-half; dim],
            vec![true; total],
        )
    }

    /// Origin-centred grid restricted to the truncated ball
    /// `sqrt(r)|x| < truncation` (no restriction for `r = 0`).
    pub fn truncated_ball(
        ball: &BallConfig,
        nodes_per_axis: usize,
        spacing: f64,
        truncation: f64,
    ) -> Result<Self> {
        if !(truncation > 0.0 && truncation < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "truncation must lie in (0, 1), got {truncation}"
            )));
        }
        let dim = ball.dim();
        let mut grid = Self::full_box(dim, nodes_per_axis, spacing)?;
        let r = ball.curvature();
        let mask: Vec<bool> = (0..grid.node_count())
            .map(|node| {
                let x = grid.coords(node);
                let ns: f64 = x[..dim].iter().map(|v| v * v).sum();
                r * ns < truncation * truncation
            })
            .collect();
        grid = Self::new(grid.spacing, grid.extents, grid.origin, mask)?;
        Ok(grid)
    }

    fn touches_outside(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        let mut offs = [0i64; MAX_DIM];
        let count = 3usize.pow(self.dim as u32);
        for code in 0..count {
            let mut c = code;
            for o in offs[..self.dim].iter_mut() {
                *o = (c % 3) as i64 - 1;
                c /= 3;
            }
            let mut flat = 0usize;
            let mut inside = true;
            for a in 0..self.dim {
                let j = idx[a] as i64 + offs[a];
                if j < 0 || j >= self.extents[a] as i64 {
                    inside = false;
                    break;
                }
                flat += j as usize * self.strides[a];
            }
            if !inside || !self.mask[flat] {
                return true;
            }
        }
        false
    }

    fn validate(&self) -> Result<()> {
        let inside: Vec<usize> = (0..self.node_count()).filter(|&n| self.mask[n]).collect();
        if inside.is_empty() {
            return Err(Error::DegenerateGrid("mask selects no nodes".into()));
        }
        if !inside.iter().any(|&n| !self.boundary[n]) {
            return Err(Error::DegenerateGrid("mask has no interior nodes".into()));
        }
        for &node in &inside {
            for a in 0..self.dim {
                if self.neighbor(node, a, 1).is_none() && self.neighbor(node, a, -1).is_none() {
                    return Err(Error::DegenerateGrid(format!(
                        "node {node} has no masked-in neighbour along axis {a}"
                    )));
                }
            }
        }
        // connectivity through axis neighbours
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![inside[0]];
        seen[inside[0]] = true;
        let mut reached = 1;
        while let Some(n) = stack.pop() {
            for a in 0..self.dim {
                for s in [-1, 1] {
                    if let Some(m) = self.neighbor(n, a, s) {
                        if !seen[m] {
                            seen[m] = true;
                            reached += 1;
                            stack.push(m);
                        }
                    }
                }
            }
        }
        if reached != inside.len() {
            return Err(Error::DegenerateGrid("masked-in region is not connected".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn node_count(&self) -> usize {
        self.mask.len()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Volume of one grid cell, `Π h_a`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn is_inside(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.mask[node] && !self.boundary[node]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.boundary[n]).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.is_interior(n)).collect()
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rem = node;
        for a in 0..self.dim {
            idx[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
        idx
    }

    pub fn coords(&self, node: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(node);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.origin[a] + idx[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Node at `step` (±1, ±2, ...) along `axis`, if on the grid and masked in.
    pub fn neighbor(&self, node: usize, axis: usize, step: i64) -> Option<usize> {
        let m = self.offset(node, axis, step)?;
        self.mask[m].then_some(m)
    }

    /// Node at `step` along `axis` ignoring the mask.
    pub(crate) fn offset(&self, node: usize, axis: usize, step: i64) -> Option<usize> {
        let i = (node / self.strides[axis]) % self.extents[axis];
        let j = i as i64 + step;
        if j < 0 || j >= self.extents[axis] as i64 {
            return None;
        }
        Some((node as i64 + step * self.strides[axis] as i64) as usize)
    }

    /// Depth of each masked-in node: 0 on the boundary, `k` when the nearest
    /// boundary node is `k` steps away in the chessboard metric.
    pub fn depth(&self) -> Vec<usize> {
        let total = self.node_count();
        let mut depth = vec![usize::MAX; total];
        let mut frontier: Vec<usize> = self.boundary_nodes();
        for &b in &frontier {
            depth[b] = 0;
        }
        let count = 3usize.pow(self.dim as u32);
        let mut level = 0;
        while !frontier.is_empty() {
            level += 1;
            let mut next = Vec::new();
            for &n in &frontier {
                let idx = self.multi_index(n);
                for code in 0..count {
                    let mut c = code;
                    let mut flat = 0usize;
                    let mut ok = true;
                    for a in 0..self.dim {
                        let j = idx[a] as i64 + (c % 3) as i64 - 1;
                        c /= 3;
                        if j < 0 || j >= self.extents[a] as i64 {
                            ok = false;
                            break;
                        }
                        flat += j as usize * self.strides[a];
                    }
                    if ok && self.mask[flat] && depth[flat] == usize::MAX {
                        depth[flat] = level;
                        next.push(flat);
                    }
                }
            }
            frontier = next;
        }
        depth
    }
}
