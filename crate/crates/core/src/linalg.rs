//! Small dense kernels for the per-node n×n matrices (n ≤ [`MAX_DIM`]).
//!
//! Matrices are row-major slices of length `n * n`. The hot loops of the
//! flow call these once per node per step, so nothing here allocates.

use nalgebra::{DMatrix, SymmetricEigen};

pub const MAX_DIM: usize = 4;
pub const MAX_SQ: usize = MAX_DIM * MAX_DIM;

/// Lower Cholesky factor of an SPD matrix. Returns `false` if a pivot is not
/// strictly positive (or not finite).
pub fn cholesky(n: usize, a: &[f64], l: &mut [f64]) -> bool {
    for v in l[..n * n].iter_mut() {
        *v = 0.0;
    }
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

/// Solve `L L^T x = b` in place given the Cholesky factor.
pub fn cholesky_solve(n: usize, l: &[f64], b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Inverse of an SPD matrix via Cholesky. Returns `false` when `a` is not SPD.
pub fn spd_inverse(n: usize, a: &[f64], inv: &mut [f64]) -> bool {
    let mut l = [0.0; MAX_SQ];
    if !cholesky(n, a, &mut l) {
        return false;
    }
    let mut col = [0.0; MAX_DIM];
    for j in 0..n {
        for (i, c) in col[..n].iter_mut().enumerate() {
            *c = if i == j { 1.0 } else { 0.0 };
        }
        cholesky_solve(n, &l, &mut col[..n]);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // exact symmetry for downstream contractions
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = m;
            inv[j * n + i] = m;
        }
    }
    true
}

/// Determinant of an SPD matrix (product of squared Cholesky pivots).
pub fn spd_det(n: usize, a: &[f64]) -> Option<f64> {
    let mut l = [0.0; MAX_SQ];
    if !cholesky(n, a, &mut l) {
        return None;
    }
    Some((0..n).map(|i| l[i * n + i] * l[i * n + i]).product())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(n: usize, a: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(n, n, &a[..n * n]);
    SymmetricEigen::new(m).eigenvalues.max()
}

/// Extreme generalized eigenvalues `(min, max)` of the pencil `a v = μ b v`
/// with `b` SPD. `None` when `b` is not SPD.
pub fn generalized_eigen_extremes(n: usize, a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    if n == 1 {
        if !(b[0] > 0.0) {
            return None;
        }
        let mu = a[0] / b[0];
        return Some((mu, mu));
    }
    let mut l = [0.0; MAX_SQ];
    if !cholesky(n, b, &mut l) {
        return None;
    }
    // M = L^{-1} A L^{-T}
    let mut y = [0.0; MAX_SQ];
    // Y = L^{-1} A  (forward substitution per column)
    for j in 0..n {
        for i in 0..n {
            let mut s = a[i * n + j];
            for k in 0..i {
                s -= l[i * n + k] * y[k * n + j];
            }
            y[i * n + j] = s / l[i * n + i];
        }
    }
    // M = Y L^{-T}  <=>  M^T = L^{-1} Y^T
    let mut m = [0.0; MAX_SQ];
    for j in 0..n {
        for i in 0..n {
            let mut s = y[j * n + i];
            for k in 0..i {
                s -= l[i * n + k] * m[j * n + k];
            }
            m[j * n + i] = s / l[i * n + i];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    if n == 2 {
        let (p, q, r) = (m[0], m[1], m[3]);
        let mean = 0.5 * (p + r);
        let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        return Some((mean - disc, mean + disc));
    }
    let ev = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &m[..n * n])).eigenvalues;
    Some((ev.min(), ev.max()))
}
