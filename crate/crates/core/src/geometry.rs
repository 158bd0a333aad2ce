//! Closed-form Poincaré-ball primitives.
//!
//! The ball of curvature parameter `r > 0` is `{x : r|x|^2 < 1}` with the
//! conformal metric `λ_x^2 I`, `λ_x = 2 / (1 - r|x|^2)`; its sectional
//! curvature is `-r`. For `r = 0` the ball degenerates to `R^n` with the
//! constant metric `4 I`, and the exponential/logarithmic maps at the origin
//! become the identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Output norms of [`exp_map`] are clamped to `(1 - EXP_CLAMP) / sqrt(r)`.
pub const EXP_CLAMP: f64 = 1e-5;
/// [`log_map`] rejects points with `r|x|^2 >= 1 - LOG_MARGIN`.
pub const LOG_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallConfig {
    dim: usize,
    curvature: f64,
}

impl BallConfig {
    pub fn new(dim: usize, curvature: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("ball dimension must be >= 1".into()));
        }
        if !(curvature >= 0.0) || !curvature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "curvature parameter must be finite and >= 0, got {curvature}"
            )));
        }
        Ok(Self { dim, curvature })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The parameter `r`; sectional curvature is `-r`.
    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    /// Euclidean radius `1/sqrt(r)` (infinite for `r = 0`).
    pub fn radius(&self) -> f64 {
        if self.curvature == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.curvature.sqrt()
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }
}

/// A point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    pub fn new(cfg: &BallConfig, coords: Vec<f64>) -> Result<Self> {
        cfg.check_dim(coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("ball point"));
        }
        let s = cfg.curvature * norm_sq(&coords);
        if s >= 1.0 {
            return Err(Error::OutsideBall {
                norm_sq_scaled: s,
                limit: 1.0,
            });
        }
        Ok(Self(coords))
    }

    pub fn origin(cfg: &BallConfig) -> Self {
        Self(vec![0.0; cfg.dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A tangent vector at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("tangent vector"));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn lambda_from_norm_sq(r: f64, norm_sq: f64) -> Result<f64> {
    let s = r * norm_sq;
    if !(s < 1.0) {
        return Err(Error::OutsideBall {
            norm_sq_scaled: s,
            limit: 1.0,
        });
    }
    Ok(2.0 / (1.0 - s))
}

/// `λ_x = 2 / (1 - r|x|^2)`.
pub fn conformal_factor(cfg: &BallConfig, x: &[f64]) -> Result<f64> {
    cfg.check_dim(x.len())?;
    lambda_from_norm_sq(cfg.curvature, norm_sq(x))
}

/// `g^H_x = λ_x^2 I`.
pub fn metric_at(cfg: &BallConfig, x: &[f64]) -> Result<DMatrix<f64>> {
    let l = conformal_factor(cfg, x)?;
    Ok(DMatrix::identity(cfg.dim, cfg.dim) * (l * l))
}

/// `tanh(z)/z`, continuous at 0.
fn tanh_over(z: f64) -> f64 {
    if z < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 3.0 + 2.0 * z2 * z2 / 15.0
    } else {
        z.tanh() / z
    }
}

/// `artanh(w)/w`, continuous at 0.
fn artanh_over(w: f64) -> f64 {
    if w < 1e-4 {
        let w2 = w * w;
        1.0 + w2 / 3.0 + w2 * w2 / 5.0
    } else {
        w.atanh() / w
    }
}

/// Exponential map at the origin. For `r = 0` this is the identity.
pub fn exp_map(cfg: &BallConfig, mu: &TangentVector) -> Result<BallPoint> {
    cfg.check_dim(mu.0.len())?;
    let r = cfg.curvature;
    if r == 0.0 {
        return Ok(BallPoint(mu.0.clone()));
    }
    let norm = norm_sq(&mu.0).sqrt();
    if norm == 0.0 {
        return Ok(BallPoint::origin(cfg));
    }
    let sr = r.sqrt();
    let z = sr * norm;
    let max_norm = (1.0 - EXP_CLAMP) / sr;
    let out_norm = (tanh_over(z) * norm).min(max_norm);
    let scale = out_norm / norm;
    Ok(BallPoint(mu.0.iter().map(|m| m * scale).collect()))
}

/// Logarithmic map at the origin. For `r = 0` this is the identity.
pub fn log_map(cfg: &BallConfig, nu: &BallPoint) -> Result<TangentVector> {
    cfg.check_dim(nu.0.len())?;
    let r = cfg.curvature;
    if r == 0.0 {
        return Ok(TangentVector(nu.0.clone()));
    }
    let ns = norm_sq(&nu.0);
    if r * ns >= 1.0 - LOG_MARGIN {
        return Err(Error::OutsideBall {
            norm_sq_scaled: r * ns,
            limit: 1.0 - LOG_MARGIN,
        });
    }
    let w = (r * ns).sqrt();
    let f = artanh_over(w);
    Ok(TangentVector(nu.0.iter().map(|v| v * f).collect()))
}

/// Riemannian gradient `∂^E / λ_x^2`.
pub fn riemannian_gradient(cfg: &BallConfig, x: &[f64], eucl_grad: &[f64]) -> Result<Vec<f64>> {
    cfg.check_dim(eucl_grad.len())?;
    let l = conformal_factor(cfg, x)?;
    let inv = 1.0 / (l * l);
    Ok(eucl_grad.iter().map(|g| g * inv).collect())
}

/// `g^{-1} v` for an SPD matrix `g`, via Cholesky.
pub fn metric_precondition(g: &DMatrix<f64>, eucl_grad: &[f64]) -> Result<Vec<f64>> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::NotPositiveDefinite { node: None });
    }
    if eucl_grad.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: eucl_grad.len(),
        });
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotPositiveDefinite { node: None });
            }
        }
    }
    let chol = g
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { node: None })?;
    let x = chol.solve(&DVector::from_column_slice(eucl_grad));
    Ok(x.iter().copied().collect())
}

/// Vector-Jacobian product of [`exp_map`] at `mu` (the Jacobian is symmetric).
pub fn exp_map_vjp(cfg: &BallConfig, mu: &[f64], cotangent: &[f64]) -> Vec<f64> {
    let r = cfg.curvature;
    let s = norm_sq(mu).sqrt();
    if r == 0.0 || s == 0.0 {
        return cotangent.to_vec();
    }
    let sr = r.sqrt();
    let z = sr * s;
    let dot: f64 = mu.iter().zip(cotangent).map(|(a, b)| a * b).sum();
    let max_norm = (1.0 - EXP_CLAMP) / sr;
    if tanh_over(z) * s >= max_norm {
        // clamped branch: p = c μ/|μ|
        let c = max_norm / s;
        return mu
            .iter()
            .zip(cotangent)
            .map(|(m, g)| c * (g - m * dot / (s * s)))
            .collect();
    }
    // J = φ I + (φ'(s)/s) μ μ^T with φ(s) = tanh(√r s)/(√r s)
    let phi = tanh_over(z);
    let dphi_over_s = if z < 1e-3 {
        r * (-2.0 / 3.0 + 8.0 * z * z / 15.0)
    } else {
        let sech2 = 1.0 / (z.cosh() * z.cosh());
        r * (z * sech2 - z.tanh()) / (z * z * z)
    };
    mu.iter()
        .zip(cotangent)
        .map(|(m, g)| phi * g + dphi_over_s * m * dot)
        .collect()
}

/// Vector-Jacobian product of [`log_map`] at `nu` (the Jacobian is symmetric).
pub fn log_map_vjp(cfg: &BallConfig, nu: &[f64], cotangent: &[f64]) -> Vec<f64> {
    let r = cfg.curvature;
    let t = norm_sq(nu).sqrt();
    if r == 0.0 || t == 0.0 {
        return cotangent.to_vec();
    }
    let w = r.sqrt() * t;
    let psi = artanh_over(w);
    let dpsi_over_t = if w < 1e-3 {
        r * (2.0 / 3.0 + 4.0 * w * w / 5.0)
    } else {
        r * (w / (1.0 - w * w) - w.atanh()) / (w * w * w)
    };
    let dot: f64 = nu.iter().zip(cotangent).map(|(a, b)| a * b).sum();
    nu.iter()
        .zip(cotangent)
        .map(|(v, g)| psi * g + dpsi_over_t * v * dot)
        .collect()
}

/// Gradient of `λ_x^2` with respect to `x`: `16 r x / (1 - r|x|^2)^3`.
pub fn conformal_factor_sq_grad(cfg: &BallConfig, x: &[f64]) -> Result<Vec<f64>> {
    let r = cfg.curvature;
    let d = 1.0 - r * norm_sq(x);
    if !(d > 0.0) {
        return Err(Error::OutsideBall {
            norm_sq_scaled: 1.0 - d,
            limit: 1.0,
        });
    }
    let c = 16.0 * r / (d * d * d);
    Ok(x.iter().map(|v| c * v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ball(n: usize, r: f64) -> BallConfig {
        BallConfig::new(n, r).unwrap()
    }

    #[test]
    fn conformal_factor_values() {
        let b = ball(2, 1.0);
        assert_eq!(conformal_factor(&b, &[0.0, 0.0]).unwrap(), 2.0);
        assert_relative_eq!(
            conformal_factor(&b, &[0.5, 0.0]).unwrap(),
            8.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(conformal_factor(&ball(2, 0.0), &[3.0, -7.0]).unwrap(), 2.0);
        assert!(matches!(
            conformal_factor(&b, &[1.0, 0.0]),
            Err(Error::OutsideBall { .. })
        ));
    }

    #[test]
    fn metric_values() {
        let b = ball(2, 1.0);
        assert_eq!(metric_at(&b, &[0.0, 0.0]).unwrap(), DMatrix::identity(2, 2) * 4.0);
        let m = metric_at(&b, &[0.0, 0.5]).unwrap();
        assert_relative_eq!(m[(0, 0)], 64.0 / 9.0, epsilon = 1e-13);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(metric_at(&ball(3, 0.0), &[9.0, 1.0, 2.0]).unwrap(), DMatrix::identity(3, 3) * 4.0);
    }

    #[test]
    fn exp_map_examples() {
        let b = ball(2, 1.0);
        let zero = exp_map(&b, &TangentVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(zero.coords(), &[0.0, 0.0]);
        let p = exp_map(&b, &TangentVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        // tanh(1) to 16 digits
        assert_relative_eq!(p.coords()[0], 0.761_594_155_955_764_9, epsilon = 1e-15);
        assert_eq!(p.coords()[1], 0.0);
        // tanh(z)/z = 1 - z^2/3 + O(z^4) with z = 1e-4
        let tiny = ball(2, 1e-8);
        let q = exp_map(&tiny, &TangentVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert!((q.coords()[0] - 1.0).abs() < 1e-7);
        assert_relative_eq!(q.coords()[0], 1.0 - 1e-8 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn log_map_examples() {
        let b = ball(2, 1.0);
        let z = log_map(&b, &BallPoint::origin(&b)).unwrap();
        assert_eq!(z.coords(), &[0.0, 0.0]);
        let v = log_map(&b, &BallPoint::new(&b, vec![0.5, 0.0]).unwrap()).unwrap();
        // artanh(0.5) = ln(3)/2
        assert_relative_eq!(v.coords()[0], 0.549_306_144_334_054_8, epsilon = 1e-15);
        let near_edge = BallPoint(vec![1.0 - 1e-14, 0.0]);
        assert!(log_map(&b, &near_edge).is_err());
    }

    #[test]
    fn zero_curvature_is_identity_embedding() {
        let b = ball(3, 0.0);
        let mu = TangentVector::new(vec![10.0, -3.0, 0.5]).unwrap();
        let p = exp_map(&b, &mu).unwrap();
        assert_eq!(p.coords(), mu.coords());
        assert_eq!(log_map(&b, &p).unwrap(), mu);
        assert_eq!(
            riemannian_gradient(&b, &[1.0, 2.0, 3.0], &[4.0, 8.0, -2.0]).unwrap(),
            vec![1.0, 2.0, -0.5]
        );
    }

    #[test]
    fn gradient_examples() {
        let b = ball(2, 1.0);
        assert_eq!(riemannian_gradient(&b, &[0.0, 0.0], &[4.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let g = riemannian_gradient(&b, &[0.5, 0.0], &[64.0 / 9.0, 0.0]).unwrap();
        // linear-solve oracle: g^H d = ∂^E with g^H = (64/9) I
        let oracle = metric_precondition(&metric_at(&b, &[0.5, 0.0]).unwrap(), &[64.0 / 9.0, 0.0]).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[0], oracle[0], epsilon = 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn precondition_examples() {
        let v = metric_precondition(&DMatrix::identity(3, 3), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(v, vec![1.0, -2.0, 3.0]);
        let v = metric_precondition(&(DMatrix::identity(2, 2) * 4.0), &[4.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let v = metric_precondition(&g, &[2.0, 8.0]).unwrap();
        let inv = g.try_inverse().unwrap();
        let oracle = inv * DVector::from_column_slice(&[2.0, 8.0]);
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], oracle[1], epsilon = 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(
            metric_precondition(&bad, &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    fn fd_vjp(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], cot: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                let (fp, fm) = (f(&xp), f(&xm));
                fp.iter().zip(&fm).zip(cot).map(|((a, b), c)| (a - b) / (2.0 * h) * c).sum()
            })
            .collect()
    }

    #[test]
    fn map_jacobians_match_finite_differences() {
        for &r in &[0.25, 1.0, 4.0] {
            let b = ball(3, r);
            let mu = [0.3, -0.7, 0.2];
            let cot = [1.0, 0.5, -2.0];
            let exp_f = |x: &[f64]| exp_map(&b, &TangentVector(x.to_vec())).unwrap().0;
            let a = exp_map_vjp(&b, &mu, &cot);
            let o = fd_vjp(exp_f, &mu, &cot);
            for (x, y) in a.iter().zip(&o) {
                assert!((x - y).abs() < 1e-8, "exp r={r}: {x} vs {y}");
            }
            let nu = exp_map(&b, &TangentVector(mu.to_vec())).unwrap().0;
            let log_f = |x: &[f64]| log_map(&b, &BallPoint(x.to_vec())).unwrap().0;
            let a = log_map_vjp(&b, &nu, &cot);
            let o = fd_vjp(log_f, &nu, &cot);
            for (x, y) in a.iter().zip(&o) {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "log r={r}: {x} vs {y}");
            }
            let lam_f = |x: &[f64]| {
                let l = conformal_factor(&b, x).unwrap();
                vec![l * l]
            };
            let a = conformal_factor_sq_grad(&b, &nu).unwrap();
            let o = fd_vjp(lam_f, &nu, &[1.0]);
            for (x, y) in a.iter().zip(&o) {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn small_argument_jacobian_branch() {
        let b = ball(2, 1.0);
        let mu = [1e-5, 2e-5];
        let cot = [0.3, -0.1];
        let exp_f = |x: &[f64]| exp_map(&b, &TangentVector(x.to_vec())).unwrap().0;
        let a = exp_map_vjp(&b, &mu, &cot);
        let h = 1e-7;
        for k in 0..2 {
            let mut xp = mu.to_vec();
            let mut xm = mu.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let d: f64 = exp_f(&xp)
                .iter()
                .zip(exp_f(&xm))
                .zip(&cot)
                .map(|((p, m), c)| (p - m) / (2.0 * h) * c)
                .sum();
            assert!((a[k] - d).abs() < 1e-8);
        }
    }

    #[test]
    fn clamped_points_return_to_clamp_radius() {
        let b = ball(2, 4.0);
        let p = exp_map(&b, &TangentVector::new(vec![5.0, 0.0]).unwrap()).unwrap();
        assert!((p.coords()[0] - (1.0 - EXP_CLAMP) / 2.0).abs() < 1e-15);
        let back = log_map(&b, &p).unwrap();
        assert!((back.coords()[0] - (1.0 - EXP_CLAMP).atanh() / 2.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn roundtrip_and_containment(
            r in prop::sample::select(vec![0.25, 1.0, 4.0]),
            v in prop::collection::vec(-1.0f64..1.0, 1..6),
            scale in 0.0f64..5.0,
        ) {
            let b = ball(v.len(), r);
            let n = norm_sq(&v).sqrt();
            // below the clamp radius artanh(1 - EXP_CLAMP) ≈ 6.1
            let scale = scale.min(6.0 / r.sqrt());
            let mu: Vec<f64> = if n > 0.0 { v.iter().map(|x| x / n * scale).collect() } else { v.clone() };
            let p = exp_map(&b, &TangentVector::new(mu.clone()).unwrap()).unwrap();
            prop_assert!(r * norm_sq(p.coords()) < 1.0);
            let back = log_map(&b, &p).unwrap();
            let err: f64 = back.coords().iter().zip(&mu).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err < 1e-9, "err {err}");
        }

        #[test]
        fn containment_for_huge_vectors(x in -1e6f64..1e6, y in -1e6f64..1e6) {
            let b = ball(2, 1.0);
            let p = exp_map(&b, &TangentVector::new(vec![x, y]).unwrap()).unwrap();
            prop_assert!(norm_sq(p.coords()) < 1.0);
        }

        #[test]
        fn metric_times_gradient_is_identity(
            r in 0.0f64..4.0,
            dir in prop::collection::vec(-1.0f64..1.0, 3),
            t in 0.0f64..0.999,
            v in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let b = ball(3, r);
            let n = norm_sq(&dir).sqrt().max(1e-12);
            let rad = if r > 0.0 { t / r.sqrt() } else { t * 10.0 };
            let x: Vec<f64> = dir.iter().map(|d| d / n * rad).collect();
            prop_assume!(r * norm_sq(&x) < 1.0);
            let d = riemannian_gradient(&b, &x, &v).unwrap();
            let g = metric_at(&b, &x).unwrap();
            let back = &g * DVector::from_column_slice(&d);
            for i in 0..3 {
                prop_assert!((back[i] - v[i]).abs() <= 1e-12 * v[i].abs().max(1e-300) + 1e-300);
            }
            let ev = g.symmetric_eigen().eigenvalues;
            prop_assert!(ev.min() > 0.0);
        }

        #[test]
        fn conformal_factor_increases_with_radius(r in 0.01f64..4.0, a in 0.0f64..0.99, b in 0.0f64..0.99) {
            prop_assume!((a - b).abs() > 1e-9);
            let c = ball(1, r);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let s = 1.0 / r.sqrt();
            prop_assert!(conformal_factor(&c, &[lo * s]).unwrap() < conformal_factor(&c, &[hi * s]).unwrap());
        }
    }
}
