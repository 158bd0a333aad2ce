use nalgebra::DMatrix;

use super::ShiftSpec;
use crate::error::{Error, Result};

/// Squared conformal factors `λ²` of one sample at shifts k1, k2, j1, j2.
pub type LambdaQuad = [f64; 4];

fn quotient(q: &LambdaQuad, s: &ShiftSpec) -> f64 {
    (q[0] - q[1]) / s.dk() - (q[2] - q[3]) / s.dj()
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    v.sum::<f64>() / n as f64
}

/// Batch mean of `[(λ²_k1 − λ²_k2)/(k1 − k2) − (λ²_j1 − λ²_j2)/(j1 − j2)]²`.
pub fn regularization_estimate(quads: &[LambdaQuad], shifts: &ShiftSpec) -> f64 {
    mean(quads.iter().map(|q| quotient(q, shifts).powi(2)))
}

/// Per-sample derivative of the estimate's summand with respect to each `λ²`.
pub(crate) fn estimate_grad(q: &LambdaQuad, s: &ShiftSpec) -> [f64; 4] {
    let d = 2.0 * quotient(q, s);
    [d / s.dk(), -d / s.dk(), -d / s.dj(), d / s.dj()]
}

/// The same difference quotient on full metric matrices, squared Frobenius
/// norm, batch mean.
pub fn regularization_raw(metrics: &[[DMatrix<f64>; 4]], shifts: &ShiftSpec) -> Result<f64> {
    let mut total = 0.0;
    for m in metrics {
        let n = m[0].nrows();
        if m.iter().any(|g| g.nrows() != n || g.ncols() != n) {
            return Err(Error::Dimension {
                expected: n * n,
                got: m.iter().map(|g| g.len()).find(|&l| l != n * n).unwrap_or(0),
            });
        }
        let d = (&m[0] - &m[1]) / shifts.dk() - (&m[2] - &m[3]) / shifts.dj();
        total += d.norm_squared();
    }
    Ok(if metrics.is_empty() {
        0.0
    } else {
        total / metrics.len() as f64
    })
}

/// `ḡ_m = c_m·λ²_m·I` in dimension `n`.
pub fn conformal_metrics(quads: &[LambdaQuad], factors: &[[f64; 4]], n: usize) -> Result<Vec<[DMatrix<f64>; 4]>> {
    if quads.len() != factors.len() {
        return Err(Error::Dimension {
            expected: quads.len(),
            got: factors.len(),
        });
    }
    Ok(quads
        .iter()
        .zip(factors)
        .map(|(q, c)| std::array::from_fn(|m| DMatrix::identity(n, n) * (c[m] * q[m])))
        .collect())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("epsilon must be non-negative, got {eps}")))
    }
}

/// Upper estimate with the `(1+ε)` factors placed as printed and the tensor
/// prefactor reduced to 1:
/// `(1+ε)^{-1}·[((1+ε)²λ²_k1 − λ²_k2)/(k1−k2) − (λ²_j1 − (1+ε)²λ²_j2)/(j1−j2)]²`.
pub fn bound_upper(quads: &[LambdaQuad], shifts: &ShiftSpec, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let a = (1.0 + eps).powi(2);
    Ok(mean(quads.iter().map(|q| {
        let b = (a * q[0] - q[1]) / shifts.dk() - (q[2] - a * q[3]) / shifts.dj();
        b * b / (1.0 + eps)
    })))
}

/// Lower estimate, mirrored:
/// `(1+ε)^{-1}·[(λ²_k1 − (1+ε)²λ²_k2)/(k1−k2) − ((1+ε)²λ²_j1 − λ²_j2)/(j1−j2)]²`.
pub fn bound_lower(quads: &[LambdaQuad], shifts: &ShiftSpec, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let a = (1.0 + eps).powi(2);
    Ok(mean(quads.iter().map(|q| {
        let b = (q[0] - a * q[1]) / shifts.dk() - (a * q[2] - q[3]) / shifts.dj();
        b * b / (1.0 + eps)
    })))
}
