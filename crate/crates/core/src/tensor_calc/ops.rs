//! Finite-difference tensor calculus on [`Field`]s.
//!
//! First derivatives are centred where both axis neighbours are masked in and
//! one-sided (first order) otherwise. Second derivatives use compact centred
//! stencils (including the four-corner mixed stencil) at interior nodes and
//! fall back to differencing the first derivatives at boundary nodes.
//! Curvature is assembled from these via the chain rule, so the interior
//! truncation error is O(h^2).

use std::sync::Arc;

use super::field::{par_fill, ChristoffelField, CurvatureFields, Field, MetricField};
use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, MAX_DIM, MAX_SQ};

const MAX_CUBE: usize = MAX_DIM * MAX_DIM * MAX_DIM;
const MAX_QUART: usize = MAX_CUBE * MAX_DIM;

#[inline]
fn first_difference(grid: &GridSpec, data: &[f64], comps: usize, node: usize, axis: usize, c: usize) -> f64 {
    let h = grid.spacing()[axis];
    let at = |m: usize| data[m * comps + c];
    match (grid.neighbor(node, axis, 1), grid.neighbor(node, axis, -1)) {
        (Some(a), Some(b)) => (at(a) - at(b)) / (2.0 * h),
        (Some(a), None) => (at(a) - at(node)) / h,
        (None, Some(b)) => (at(node) - at(b)) / h,
        (None, None) => 0.0,
    }
}

/// `∂_p f_c` at every masked-in node, stored `[p][c]`.
pub fn partials(f: &Field) -> Field {
    let grid = f.grid().clone();
    let n = grid.dim();
    let comps = f.comps();
    let data = f.data();
    par_fill(&grid, n * comps, |node, out| {
        for p in 0..n {
            for c in 0..comps {
                out[p * comps + c] = first_difference(&grid, data, comps, node, p, c);
            }
        }
        true
    })
    .expect("partials never fails")
}

/// `∂_p ∂_q f_c` at every masked-in node, stored `[p][q][c]`.
pub fn second_partials(f: &Field) -> Field {
    second_partials_with(f, &partials(f))
}

pub(crate) fn second_partials_with(f: &Field, first: &Field) -> Field {
    let grid = f.grid().clone();
    let n = grid.dim();
    let comps = f.comps();
    let data = f.data();
    let d1 = first.data();
    let c1 = n * comps;
    par_fill(&grid, n * n * comps, |node, out| {
        if grid.is_interior(node) {
            for p in 0..n {
                let hp = grid.spacing()[p];
                let plus = grid.offset(node, p, 1).unwrap();
                let minus = grid.offset(node, p, -1).unwrap();
                for c in 0..comps {
                    out[(p * n + p) * comps + c] =
                        (data[plus * comps + c] - 2.0 * data[node * comps + c] + data[minus * comps + c]) / (hp * hp);
                }
                for q in 0..p {
                    let hq = grid.spacing()[q];
                    let pp = grid.offset(plus, q, 1).unwrap();
                    let pm = grid.offset(plus, q, -1).unwrap();
                    let mp = grid.offset(minus, q, 1).unwrap();
                    let mm = grid.offset(minus, q, -1).unwrap();
                    for c in 0..comps {
                        let v = (data[pp * comps + c] - data[pm * comps + c] - data[mp * comps + c]
                            + data[mm * comps + c])
                            / (4.0 * hp * hq);
                        out[(p * n + q) * comps + c] = v;
                        out[(q * n + p) * comps + c] = v;
                    }
                }
            }
        } else {
            for p in 0..n {
                for q in 0..=p {
                    for c in 0..comps {
                        let a = first_difference(&grid, d1, c1, node, p, q * comps + c);
                        let b = first_difference(&grid, d1, c1, node, q, p * comps + c);
                        let v = 0.5 * (a + b);
                        out[(p * n + q) * comps + c] = v;
                        out[(q * n + p) * comps + c] = v;
                    }
                }
            }
        }
        true
    })
    .expect("second partials never fail")
}

// ---- per-node kernels -------------------------------------------------------

/// `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
#[inline]
pub(crate) fn christoffel_at(n: usize, ginv: &[f64], dg: &[f64], out: &mut [f64]) {
    let nn = n * n;
    let mut lower = [0.0; MAX_CUBE];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                lower[(l * n + i) * n + j] =
                    0.5 * (dg[i * nn + j * n + l] + dg[j * nn + i * n + l] - dg[l * nn + i * n + j]);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += ginv[k * n + l] * lower[(l * n + i) * n + j];
                }
                out[(k * n + i) * n + j] = s;
            }
        }
    }
}

/// `∂_i Γ^l_{jk}` stored `[i][l][j][k]`, from first and second metric partials.
#[inline]
pub(crate) fn christoffel_derivative_at(
    n: usize,
    ginv: &[f64],
    dg: &[f64],
    ddg: &[f64],
    gamma: &[f64],
    out: &mut [f64],
) {
    let nn = n * n;
    // ddg layout: [p][q][a][b] -> ((p*n+q)*n + a)*n + b
    let dd = |p: usize, q: usize, a: usize, b: usize| ddg[((p * n + q) * n + a) * n + b];
    for i in 0..n {
        // t[a][j][k] = Σ_b ∂_i g_{ab} Γ^b_{jk}
        let mut t = [0.0; MAX_CUBE];
        for a in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += dg[i * nn + a * n + b] * gamma[(b * n + j) * n + k];
                    }
                    t[(a * n + j) * n + k] = s;
                }
            }
        }
        // second-derivative lowered symbol: ½(∂_i∂_j g_km + ∂_i∂_k g_jm − ∂_i∂_m g_jk)
        let mut sd = [0.0; MAX_CUBE];
        for m in 0..n {
            for j in 0..n {
                for k in 0..n {
                    sd[(m * n + j) * n + k] = 0.5 * (dd(i, j, k, m) + dd(i, k, j, m) - dd(i, m, j, k));
                }
            }
        }
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        let gi = ginv[l * n + a];
                        s += gi * (sd[(a * n + j) * n + k] - t[(a * n + j) * n + k]);
                    }
                    out[((i * n + l) * n + j) * n + k] = s;
                }
            }
        }
    }
}

/// `R^l_{ijk} = ∂_i Γ^l_{jk} − ∂_j Γ^l_{ik} + Γ^p_{jk} Γ^l_{ip} − Γ^p_{ik} Γ^l_{jp}`.
#[inline]
pub(crate) fn riemann_at(n: usize, dgamma: &[f64], gamma: &[f64], out: &mut [f64]) {
    let g = |k: usize, i: usize, j: usize| gamma[(k * n + i) * n + j];
    let dg = |i: usize, l: usize, j: usize, k: usize| dgamma[((i * n + l) * n + j) * n + k];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = dg(i, l, j, k) - dg(j, l, i, k);
                    for p in 0..n {
                        s += g(p, j, k) * g(l, i, p) - g(p, i, k) * g(l, j, p);
                    }
                    out[((l * n + i) * n + j) * n + k] = s;
                }
            }
        }
    }
}

/// `R_{ij} = R^p_{pij}`.
#[inline]
pub(crate) fn ricci_from_riemann_at(n: usize, riem: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..n {
                s += riem[((p * n + p) * n + i) * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// Ricci tensor at a node straight from metric data.
#[inline]
pub(crate) fn ricci_at(n: usize, ginv: &[f64], dg: &[f64], ddg: &[f64], gamma: &[f64], out: &mut [f64]) {
    let mut dgamma = [0.0; MAX_QUART];
    christoffel_derivative_at(n, ginv, dg, ddg, gamma, &mut dgamma);
    let mut riem = [0.0; MAX_QUART];
    riemann_at(n, &dgamma, gamma, &mut riem);
    ricci_from_riemann_at(n, &riem, out);
}

/// `|h|^2 = ref^{ip} ref^{jq} h_{ij} h_{pq}` given `ref^{-1}`.
#[inline]
pub(crate) fn norm_sq_at(n: usize, inv: &[f64], h: &[f64]) -> f64 {
    // A = inv · h ; |h|^2 = tr(A A^T)-style contraction Σ (inv h inv)_{pq} h_{pq}
    let mut a = [0.0; MAX_SQ];
    for i in 0..n {
        for q in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += h[i * n + j] * inv[j * n + q];
            }
            a[i * n + q] = s;
        }
    }
    let mut total = 0.0;
    for p in 0..n {
        for q in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += inv[p * n + i] * a[i * n + q];
            }
            total += s * h[p * n + q];
        }
    }
    total
}

fn inverse_or_fail(n: usize, m: &[f64], inv: &mut [f64]) -> bool {
    linalg::spd_inverse(n, m, inv)
}

fn not_spd(node: usize) -> Error {
    Error::NotPositiveDefinite { node: Some(node) }
}

// ---- public operations -----------------------------------------------------

/// Christoffel symbols of the second kind.
pub fn christoffel(metric: &MetricField) -> Result<ChristoffelField> {
    let dg = partials(metric.field());
    christoffel_with(metric, &dg)
}

pub(crate) fn christoffel_with(metric: &MetricField, dg: &Field) -> Result<ChristoffelField> {
    let grid = metric.grid().clone();
    let n = grid.dim();
    let f = par_fill(&grid, n * n * n, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !inverse_or_fail(n, metric.node(node), &mut inv) {
            return false;
        }
        christoffel_at(n, &inv, dg.node(node), out);
        true
    })
    .map_err(not_spd)?;
    Ok(ChristoffelField(f))
}

/// Riemann tensor `R^l_{ijk}` stored `[l][i][j][k]`.
pub fn riemann(metric: &MetricField, gamma: &ChristoffelField) -> Result<Field> {
    gamma.0.check_same_grid(metric.field())?;
    let dg = partials(metric.field());
    let ddg = second_partials_with(metric.field(), &dg);
    let grid = metric.grid().clone();
    let n = grid.dim();
    par_fill(&grid, n * n * n * n, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !inverse_or_fail(n, metric.node(node), &mut inv) {
            return false;
        }
        let mut dgamma = [0.0; MAX_QUART];
        christoffel_derivative_at(n, &inv, dg.node(node), ddg.node(node), gamma.0.node(node), &mut dgamma);
        riemann_at(n, &dgamma, gamma.0.node(node), out);
        true
    })
    .map_err(not_spd)
}

/// Lower the last index: `R_{ijkl} = g_{lm} R^m_{ijk}`.
pub fn riemann_lowered(metric: &MetricField, riem: &Field) -> Result<Field> {
    riem.check_same_grid(metric.field())?;
    let grid = metric.grid().clone();
    let n = grid.dim();
    Ok(par_fill(&grid, n * n * n * n, |node, out| {
        let g = metric.node(node);
        let r = riem.node(node);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut s = 0.0;
                        for m in 0..n {
                            s += g[l * n + m] * r[((m * n + i) * n + j) * n + k];
                        }
                        out[((i * n + j) * n + k) * n + l] = s;
                    }
                }
            }
        }
        true
    })
    .expect("lowering never fails"))
}

/// Ricci tensor `R_{ij} = R^p_{pij}`.
pub fn ricci(riem: &Field) -> Field {
    let grid = riem.grid().clone();
    let n = grid.dim();
    par_fill(&grid, n * n, |node, out| {
        ricci_from_riemann_at(n, riem.node(node), out);
        true
    })
    .expect("ricci never fails")
}

/// Scalar curvature `R = g^{ij} R_{ij}`.
pub fn scalar_curvature(metric: &MetricField, ric: &Field) -> Result<Field> {
    ric.check_same_grid(metric.field())?;
    let grid = metric.grid().clone();
    let n = grid.dim();
    par_fill(&grid, 1, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !inverse_or_fail(n, metric.node(node), &mut inv) {
            return false;
        }
        let r = ric.node(node);
        out[0] = (0..n * n).map(|k| inv[k] * r[k]).sum();
        true
    })
    .map_err(not_spd)
}

/// Riemann, Ricci and scalar curvature of a metric in one call.
pub fn curvature(metric: &MetricField) -> Result<CurvatureFields> {
    let gamma = christoffel(metric)?;
    let riem = riemann(metric, &gamma)?;
    let ric = ricci(&riem);
    let scalar = scalar_curvature(metric, &ric)?;
    Ok(CurvatureFields {
        riemann: riem,
        ricci: ric,
        scalar,
    })
}

/// `∇_p h_{ij} = ∂_p h_{ij} − Γ^q_{pi} h_{qj} − Γ^q_{pj} h_{iq}`, stored `[p][i][j]`.
pub fn covariant_derivative(metric: &MetricField, gamma: &ChristoffelField, h: &Field) -> Result<Field> {
    h.check_same_grid(metric.field())?;
    gamma.0.check_same_grid(metric.field())?;
    let grid = metric.grid().clone();
    let n = grid.dim();
    if h.comps() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            got: h.comps(),
        });
    }
    let dh = partials(h);
    Ok(par_fill(&grid, n * n * n, |node, out| {
        let hv = h.node(node);
        let d = dh.node(node);
        let g = gamma.0.node(node);
        for p in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = d[p * n * n + i * n + j];
                    for q in 0..n {
                        s -= g[(q * n + p) * n + i] * hv[q * n + j] + g[(q * n + p) * n + j] * hv[i * n + q];
                    }
                    out[(p * n + i) * n + j] = s;
                }
            }
        }
        true
    })
    .expect("covariant derivative never fails"))
}

/// DeTurck covector `W_i = ḡ^{pq} ḡ_{ij} (Γ[ḡ]^j_{pq} − Γ[ref]^j_{pq})`.
pub fn deturck_vector(metric: &MetricField, reference: &MetricField) -> Result<Field> {
    metric.field().check_same_grid(reference.field())?;
    let gamma = christoffel(metric)?;
    let gamma_ref = christoffel(reference)?;
    deturck_vector_with(metric, &gamma, &gamma_ref)
}

pub(crate) fn deturck_vector_with(
    metric: &MetricField,
    gamma: &ChristoffelField,
    gamma_ref: &ChristoffelField,
) -> Result<Field> {
    gamma.0.check_same_grid(gamma_ref.field())?;
    let grid = metric.grid().clone();
    let n = grid.dim();
    par_fill(&grid, n, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !inverse_or_fail(n, metric.node(node), &mut inv) {
            return false;
        }
        deturck_at(n, metric.node(node), &inv, gamma.0.node(node), gamma_ref.0.node(node), out);
        true
    })
    .map_err(not_spd)
}

#[inline]
pub(crate) fn deturck_at(n: usize, g: &[f64], ginv: &[f64], gamma: &[f64], gamma_ref: &[f64], out: &mut [f64]) {
    let mut up = [0.0; MAX_DIM];
    for j in 0..n {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                let k = (j * n + p) * n + q;
                s += ginv[p * n + q] * (gamma[k] - gamma_ref[k]);
            }
        }
        up[j] = s;
    }
    for i in 0..n {
        out[i] = (0..n).map(|j| g[i * n + j] * up[j]).sum();
    }
}

/// `∇_i W_j + ∇_j W_i` for a covector field `W`.
pub fn lie_term(metric: &MetricField, gamma: &ChristoffelField, w: &Field) -> Result<Field> {
    w.check_same_grid(metric.field())?;
    gamma.0.check_same_grid(metric.field())?;
    let grid = metric.grid().clone();
    let n = grid.dim();
    if w.comps() != n {
        return Err(Error::Dimension {
            expected: n,
            got: w.comps(),
        });
    }
    let dw = partials(w);
    Ok(par_fill(&grid, n * n, |node, out| {
        lie_at(n, dw.node(node), gamma.0.node(node), w.node(node), out);
        true
    })
    .expect("lie term never fails"))
}

#[inline]
pub(crate) fn lie_at(n: usize, dw: &[f64], gamma: &[f64], w: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = dw[i * n + j] + dw[j * n + i];
            for q in 0..n {
                s -= 2.0 * gamma[(q * n + i) * n + j] * w[q];
            }
            out[i * n + j] = s;
        }
    }
}

/// `|h|^2` with both indices raised by `reference`.
pub fn tensor_norm_sq(h: &Field, reference: &MetricField) -> Result<Field> {
    h.check_same_grid(reference.field())?;
    let grid = reference.grid().clone();
    let n = grid.dim();
    if h.comps() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            got: h.comps(),
        });
    }
    par_fill(&grid, 1, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !inverse_or_fail(n, reference.node(node), &mut inv) {
            return false;
        }
        out[0] = norm_sq_at(n, &inv, h.node(node));
        true
    })
    .map_err(not_spd)
}

/// `Σ |ḡ − ref|^2_ref · sqrt(det ref) · Π h_a` over masked-in nodes, summed in
/// node order.
pub fn l2_distance_sq(metric: &MetricField, reference: &MetricField) -> Result<f64> {
    let diff = metric.field().axpby(1.0, reference.field(), -1.0)?;
    weighted_sum_sq(&diff, reference)
}

pub(crate) fn weighted_sum_sq(h: &Field, reference: &MetricField) -> Result<f64> {
    let grid = reference.grid().clone();
    let n = grid.dim();
    let weighted = par_fill(&grid, 1, |node, out| {
        let mut inv = [0.0; MAX_SQ];
        if !inverse_or_fail(n, reference.node(node), &mut inv) {
            return false;
        }
        let det = linalg::spd_det(n, reference.node(node)).unwrap_or(0.0);
        out[0] = norm_sq_at(n, &inv, h.node(node)) * det.sqrt();
        true
    })
    .map_err(not_spd)?;
    Ok(ordered_sum(&grid, weighted.data()) * grid.cell_volume())
}

fn ordered_sum(grid: &Arc<GridSpec>, values: &[f64]) -> f64 {
    let mut s = 0.0;
    for (node, v) in values.iter().enumerate() {
        if grid.is_inside(node) {
            s += v;
        }
    }
    s
}
