//! Curvature of product metrics dt² + g_t: shape operators, radial, level and mixed sectional
//! curvatures in closed form, the radial coefficients of the curvature tensor, a
//! finite-difference oracle working only from metric values, and sampled band certificates.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{AngularChart, AngularField, DiagonalProductMetric};
use crate::profiles::{rho_c1_norm, Interval, Jet};

/// Principal curvatures of the level S_t at θ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeOperatorSample {
    pub t: f64,
    pub theta: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

fn jets(metric: &DiagonalProductMetric, t: f64, theta: &[f64]) -> Result<Vec<Jet>> {
    metric.coefficients(t, theta)
}

/// Eigenvalues ½ ∂_tG_a / G_a of the shape operator of S_t.
pub fn shape_operator(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
) -> Result<ShapeOperatorSample> {
    let eigenvalues: Vec<f64> = match metric.level_scale() {
        Some(s) => {
            metric.t_domain().check(t)?;
            vec![s.sample(t).shape; metric.frame_size()]
        }
        None => jets(metric, t, theta)?
            .iter()
            .map(|g| 0.5 * g.d1 / g.value)
            .collect(),
    };
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ShapeOperatorSample {
        t,
        theta: theta.to_vec(),
        eigenvalues,
        min,
        max,
    })
}

/// −½ G''/G + ¼ (G'/G)² for one coefficient jet.
pub fn radial_from_jet(g: Jet) -> f64 {
    let r = g.d1 / g.value;
    -0.5 * g.d2 / g.value + 0.25 * r * r
}

/// Sectional curvature of the plane spanned by ∂_t and the i-th frame direction.
pub fn radial_curvature(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    i: usize,
) -> Result<f64> {
    check_index(metric, i)?;
    let g = jets(metric, t, theta)?;
    let k = radial_from_jet(g[i]);
    if !k.is_finite() {
        if let Some(s) = metric.level_scale() {
            return Ok(s.sample(t).k_radial);
        }
    }
    Ok(k)
}

fn check_index(metric: &DiagonalProductMetric, i: usize) -> Result<()> {
    if i < metric.frame_size() {
        Ok(())
    } else {
        Err(Error::Frame(format!(
            "direction {i} outside a frame of size {}",
            metric.frame_size()
        )))
    }
}

/// Sectional curvature of the level-tangent plane spanned by frame directions i ≠ j, via the
/// Gauss equation K = K^int − λ_i λ_j.
pub fn level_curvature(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    i: usize,
    j: usize,
) -> Result<f64> {
    if metric.dim() < 3 {
        return Err(Error::NoLevelPlanes);
    }
    check_index(metric, i)?;
    check_index(metric, j)?;
    if i == j {
        return Err(Error::DegeneratePlane);
    }
    let m = metric.frame_size();
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; m];
    let g = jets(metric, t, theta)?;
    x[i] = 1.0 / g[i].value.sqrt();
    y[j] = 1.0 / g[j].value.sqrt();
    level_curvature_vectors(metric, t, theta, &x, &y)
}

/// Level-plane curvature for arbitrary level vectors X, Y (coordinate components).
pub fn level_curvature_vectors(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    if metric.dim() < 3 {
        return Err(Error::NoLevelPlanes);
    }
    let g = jets(metric, t, theta)?;
    let gv: Vec<f64> = g.iter().map(|j| j.value).collect();
    let lam: Vec<f64> = g.iter().map(|j| 0.5 * j.d1 / j.value).collect();
    let ip =
        |u: &[f64], v: &[f64], w: &[f64]| -> f64 { (0..u.len()).map(|a| w[a] * u[a] * v[a]).sum() };
    let area = ip(x, x, &gv) * ip(y, y, &gv) - ip(x, y, &gv).powi(2);
    if !(area > 1e-300) {
        return Err(Error::DegeneratePlane);
    }
    let ii: Vec<f64> = (0..gv.len()).map(|a| lam[a] * gv[a]).collect();
    let extrinsic = ip(x, x, &ii) * ip(y, y, &ii) - ip(x, y, &ii).powi(2);
    let k_int = intrinsic_level_curvature(metric, t, theta, x, y)?;
    Ok(k_int - extrinsic / area)
}

/// Intrinsic sectional curvature of the level metric g_t at θ on the plane X ∧ Y: 1/c for
/// round levels c·ds², otherwise from finite differences of the level coefficients.
pub fn intrinsic_level_curvature(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    if let Some(s) = metric.level_scale() {
        return Ok(s.sample(t).inv_c);
    }
    let m = metric.frame_size();
    check_chart_margin(metric.chart(), theta, 4.0 * THETA_STEP)?;
    let eval = |th: &[f64], out: &mut [f64]| {
        let mut buf = vec![Jet::ZERO; m];
        metric.coefficients_into(t, th, &mut buf);
        for a in 0..m {
            out[a] = buf[a].value;
        }
    };
    let mj = fd_metric_jet(m, theta, THETA_STEP, &eval, &[]);
    Ok(riemann(&mj).sectional(x, y, &mj.g))
}

/// Mixed plane σ(X + aT, Y) for level vectors X, Y orthonormal in g_t:
/// (K(X,Y) + a²K(Y,T) + 2a⟨R(X,Y)Y,T⟩)/(1 + a²).
pub fn mixed_curvature(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
    a: f64,
) -> Result<f64> {
    if metric.dim() < 3 {
        return Err(Error::NoLevelPlanes);
    }
    let g = jets(metric, t, theta)?;
    let gv: Vec<f64> = g.iter().map(|j| j.value).collect();
    let ip = |u: &[f64], v: &[f64]| -> f64 { (0..u.len()).map(|k| gv[k] * u[k] * v[k]).sum() };
    let (xx, yy, xy) = (ip(x, x), ip(y, y), ip(x, y));
    if (xx - 1.0).abs() > 1e-10 || (yy - 1.0).abs() > 1e-10 || xy.abs() > 1e-10 {
        return Err(Error::Frame(format!(
            "X, Y not orthonormal: |X|² = {xx}, |Y|² = {yy}, ⟨X,Y⟩ = {xy}"
        )));
    }
    let k_xy = level_curvature_vectors(metric, t, theta, x, y)?;
    let k_yt: f64 = (0..gv.len())
        .map(|k| radial_from_jet(g[k]) * gv[k] * y[k] * y[k])
        .sum();
    let cross = if metric.level_scale().is_some() {
        0.0
    } else {
        let r = riemann_semi_analytic(metric, t, theta)?;
        let mut xf = vec![0.0; metric.dim()];
        let mut yf = vec![0.0; metric.dim()];
        let mut tf = vec![0.0; metric.dim()];
        xf[1..].copy_from_slice(x);
        yf[1..].copy_from_slice(y);
        tf[0] = 1.0;
        r.contract(&xf, &yf, &yf, &tf)
    };
    Ok((k_xy + a * a * k_yt + 2.0 * a * cross) / (1.0 + a * a))
}

/// Derivatives of the diagonal of a coordinate metric.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub n: usize,
    /// g_ii
    pub g: Vec<f64>,
    /// ∂_k g_ii at k·n + i
    pub dg: Vec<f64>,
    /// ∂_k ∂_l g_ii at (k·n + l)·n + i
    pub ddg: Vec<f64>,
}

impl MetricJet {
    fn d(&self, k: usize, i: usize) -> f64 {
        self.dg[k * self.n + i]
    }
    fn dd(&self, k: usize, l: usize, i: usize) -> f64 {
        self.ddg[(k * self.n + l) * self.n + i]
    }
}

/// The (0,4) curvature tensor R_{ijkq} = ⟨R(∂_i, ∂_j)∂_k, ∂_q⟩.
#[derive(Clone, Debug)]
pub struct RiemannTensor {
    pub n: usize,
    r: Vec<f64>,
}

impl RiemannTensor {
    pub fn get(&self, i: usize, j: usize, k: usize, q: usize) -> f64 {
        let n = self.n;
        self.r[((i * n + j) * n + k) * n + q]
    }

    /// R(X, Y, Z, W) = ⟨R(X,Y)Z, W⟩.
    pub fn contract(&self, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if y[j] == 0.0 {
                    continue;
                }
                for k in 0..n {
                    if z[k] == 0.0 {
                        continue;
                    }
                    for q in 0..n {
                        s += x[i] * y[j] * z[k] * w[q] * self.get(i, j, k, q);
                    }
                }
            }
        }
        s
    }

    /// ⟨R(X,Y)Y,X⟩ / (|X|²|Y|² − ⟨X,Y⟩²) for a diagonal metric g.
    pub fn sectional(&self, x: &[f64], y: &[f64], g: &[f64]) -> f64 {
        let ip = |u: &[f64], v: &[f64]| -> f64 { (0..u.len()).map(|k| g[k] * u[k] * v[k]).sum() };
        let area = ip(x, x) * ip(y, y) - ip(x, y).powi(2);
        self.contract(x, y, y, x) / area
    }
}

/// Curvature tensor of a diagonal metric from its first and second derivatives.
pub fn riemann(mj: &MetricJet) -> RiemannTensor {
    let n = mj.n;
    // Γ_{q,jk} = ½(∂_j g_qk + ∂_k g_qj − ∂_q g_jk), diagonal g.
    let gamma1 = |q: usize, j: usize, k: usize| -> f64 {
        let mut s = 0.0;
        if q == k {
            s += mj.d(j, q);
        }
        if q == j {
            s += mj.d(k, q);
        }
        if j == k {
            s -= mj.d(q, j);
        }
        0.5 * s
    };
    let dgamma1 = |i: usize, q: usize, j: usize, k: usize| -> f64 {
        let mut s = 0.0;
        if q == k {
            s += mj.dd(i, j, q);
        }
        if q == j {
            s += mj.dd(i, k, q);
        }
        if j == k {
            s -= mj.dd(i, q, j);
        }
        0.5 * s
    };
    let mut g1 = vec![0.0; n * n * n];
    for q in 0..n {
        for j in 0..n {
            for k in 0..n {
                g1[(q * n + j) * n + k] = gamma1(q, j, k);
            }
        }
    }
    let g1at = |q: usize, j: usize, k: usize| g1[(q * n + j) * n + k];
    let mut r = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for q in 0..n {
                    let mut v = dgamma1(i, q, j, k) - dgamma1(j, q, i, k);
                    for b in 0..n {
                        v -= g1at(b, j, k) / mj.g[b] * g1at(b, i, q);
                        v += g1at(b, i, k) / mj.g[b] * g1at(b, j, q);
                    }
                    r[((i * n + j) * n + k) * n + q] = v;
                }
            }
        }
    }
    RiemannTensor { n, r }
}

/// Step used for angular differences in the semi-analytic paths.
pub const THETA_STEP: f64 = 1e-3;

fn check_chart_margin(chart: AngularChart, theta: &[f64], need: f64) -> Result<()> {
    let m = chart.polar_margin(theta);
    if m < need {
        Err(Error::ChartMargin(format!(
            "polar margin {m:e} is below the stencil reach {need:e}"
        )))
    } else {
        Ok(())
    }
}

/// Fourth-order central first difference.
fn d4(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second difference.
fn dd4(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
}

/// Metric jet of a diagonal metric on coordinates x by fourth-order differences in every
/// coordinate not listed in `analytic` (those entries are supplied by the caller afterwards).
fn fd_metric_jet(
    n: usize,
    x: &[f64],
    h: f64,
    eval: &dyn Fn(&[f64], &mut [f64]),
    analytic: &[usize],
) -> MetricJet {
    let at = |dx: &[(usize, f64)], i: usize| -> f64 {
        let mut p = x.to_vec();
        for &(k, d) in dx {
            p[k] += d;
        }
        let mut out = vec![0.0; n];
        eval(&p, &mut out);
        out[i]
    };
    let mut g = vec![0.0; n];
    eval(x, &mut g);
    let mut dg = vec![0.0; n * n];
    let mut ddg = vec![0.0; n * n * n];
    for i in 0..n {
        for k in 0..n {
            if analytic.contains(&k) {
                continue;
            }
            dg[k * n + i] = d4(|s| at(&[(k, s)], i), h);
            ddg[(k * n + k) * n + i] = dd4(|s| at(&[(k, s)], i), h);
            for l in 0..k {
                if analytic.contains(&l) {
                    continue;
                }
                let v = d4(|s| d4(|u| at(&[(k, s), (l, u)], i), h), h);
                ddg[(k * n + l) * n + i] = v;
                ddg[(l * n + k) * n + i] = v;
            }
        }
    }
    MetricJet { n, g, dg, ddg }
}

/// Curvature tensor of the full metric at (t, θ) with exact t-derivatives and fourth-order
/// angular differences (step [`THETA_STEP`]).
pub fn riemann_semi_analytic(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
) -> Result<RiemannTensor> {
    metric.t_domain().check(t)?;
    check_chart_margin(metric.chart(), theta, 4.0 * THETA_STEP)?;
    let m = metric.frame_size();
    let n = m + 1;
    let jet_at = |th: &[f64]| -> Vec<Jet> {
        let mut buf = vec![Jet::ZERO; m];
        metric.coefficients_into(t, th, &mut buf);
        buf
    };
    let eval_values = |x: &[f64], out: &mut [f64]| {
        let j = jet_at(&x[1..]);
        out[0] = 1.0;
        for a in 0..m {
            out[a + 1] = j[a].value;
        }
    };
    let mut x = vec![t];
    x.extend_from_slice(theta);
    let mut mj = fd_metric_jet(n, &x, THETA_STEP, &eval_values, &[0]);
    let here = jet_at(theta);
    for a in 0..m {
        mj.dg[a + 1] = here[a].d1;
        mj.ddg[a + 1] = here[a].d2;
    }
    // ∂_t ∂_θk G_a from differences of the analytic t-derivative.
    for k in 1..n {
        for a in 0..m {
            let v = d4(
                |s| {
                    let mut th = theta.to_vec();
                    th[k - 1] += s;
                    jet_at(&th)[a].d1
                },
                THETA_STEP,
            );
            mj.ddg[k * n + a + 1] = v;
            mj.ddg[(k * n) * n + a + 1] = v;
        }
    }
    Ok(riemann(&mj))
}

/// R⁰_{ijk} = ⟨R(e_j, e_k)e_i, ∂_t⟩ for the frame e_a = ∂_{θ_a}/√ref_a, where `reference` is the
/// diagonal of the metric that makes the frame orthonormal (g₀ at the base point).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TensorCoefficient {
    pub value: f64,
    /// Set in dimension 2, where the coefficient vanishes identically.
    pub trivial: bool,
}

pub fn radial_tensor_coefficient(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    (i, j, k): (usize, usize, usize),
    reference: &[f64],
) -> Result<TensorCoefficient> {
    for idx in [i, j, k] {
        check_index(metric, idx)?;
    }
    if metric.dim() < 3 {
        return Ok(TensorCoefficient {
            value: 0.0,
            trivial: true,
        });
    }
    let r = riemann_semi_analytic(metric, t, theta)?;
    let norm = (reference[i] * reference[j] * reference[k]).sqrt();
    Ok(TensorCoefficient {
        value: r.get(j + 1, k + 1, i + 1, 0) / norm,
        trivial: false,
    })
}

/// Frobenius norm of ∇^g T for two diagonal angular fields g and T, in a g-orthonormal frame.
/// This bounds every component (∇_{u_k}T)(u_i, u_j) over g-orthonormal bases.
pub fn covariant_derivative_norm(
    chart: AngularChart,
    g: &dyn AngularField,
    tensor: &dyn AngularField,
    theta: &[f64],
) -> Result<f64> {
    let m = chart.level_dim();
    check_chart_margin(chart, theta, 4.0 * THETA_STEP)?;
    let gm = fd_metric_jet(m, theta, THETA_STEP, &|th, out| g.eval(th, out), &[]);
    let tm = fd_metric_jet(m, theta, THETA_STEP, &|th, out| tensor.eval(th, out), &[]);
    // Christoffel symbols of g: Γ^l_{ki} = Γ_{l,ki}/g_l.
    let gamma = |l: usize, k: usize, i: usize| -> f64 {
        let mut s = 0.0;
        if l == i {
            s += gm.d(k, l);
        }
        if l == k {
            s += gm.d(i, l);
        }
        if k == i {
            s -= gm.d(l, k);
        }
        0.5 * s / gm.g[l]
    };
    let mut sum = 0.0;
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                // (∇_k T)_{ij} = ∂_k T_ij − Γ^l_{ki} T_lj − Γ^l_{kj} T_il with T diagonal.
                let mut v = if i == j { tm.d(k, i) } else { 0.0 };
                v -= gamma(j, k, i) * tm.g[j];
                v -= gamma(i, k, j) * tm.g[i];
                let v = v / (gm.g[i] * gm.g[j] * gm.g[k]).sqrt();
                sum += v * v;
            }
        }
    }
    Ok(sum.sqrt())
}

/// Sampled maximum of [`covariant_derivative_norm`] over `samples` chart points.
pub fn max_covariant_derivative(
    chart: AngularChart,
    g: &dyn AngularField,
    tensor: &dyn AngularField,
    samples: usize,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for theta in chart.sample_points(samples) {
        best = best.max(covariant_derivative_norm(chart, g, tensor, &theta)?);
    }
    Ok(best)
}

/// C₁ = D_h + (3D_h/(4λ_min))(‖ρ‖_{C¹} + 2λ_max), the factor in |R⁰_{ijk}| < C₁ f'_ℓ(t) on the
/// deformation band.
pub fn deformation_tensor_constant(d_h: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    d_h + 3.0 * d_h / (4.0 * lambda_min) * (rho_c1_norm() + 2.0 * lambda_max)
}

/// D_ĥ (1 + (1+μ_max)/μ_min)(f'_ℓ(t+1+ε) + f_ℓ(t+1+ε)·max|ρ'|), the bound on |R⁰_{ijk}| on the
/// rounding band at local time t.
pub fn rounding_tensor_bound(
    d_hhat: f64,
    mu_min: f64,
    mu_max: f64,
    ell: f64,
    eps: f64,
    t: f64,
) -> f64 {
    let f = crate::profiles::f_ell_unchecked(ell, t + 1.0 + eps);
    d_hhat * (1.0 + (1.0 + mu_max) / mu_min) * (f.d1 + f.value * crate::profiles::rho_max_slope())
}

/// K_g = max{0, K^int_max} + C₁² n (n−1)² / λ_min², the curvature bound on [0, ε].
pub fn deformation_curvature_bound(n: usize, k_int_max: f64, c1: f64, lambda_min: f64) -> f64 {
    let nf = n as f64;
    k_int_max.max(0.0) + c1 * c1 * nf * (nf - 1.0).powi(2) / (lambda_min * lambda_min)
}

/// Result of the finite-difference oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: f64,
    /// |K(h/2) − K(h)|/15 after fourth-order differencing, a conservative error estimate.
    pub error: f64,
}

/// Default oracle step.
pub const ORACLE_STEP: f64 = 1e-3;

/// Sectional curvature of the plane X ∧ Y (full coordinate vectors (t, θ…)) computed only
/// from values of the coordinate metric: fourth-order differences at steps h and h/2 with a
/// Richardson combination.
pub fn curvature_oracle(
    metric: &DiagonalProductMetric,
    point: &[f64],
    x: &[f64],
    y: &[f64],
) -> Result<OracleValue> {
    let n = metric.dim();
    if point.len() != n || x.len() != n || y.len() != n {
        return Err(Error::Shape(format!(
            "oracle inputs must have {n} components"
        )));
    }
    let h = ORACLE_STEP;
    let dom = metric.t_domain();
    if !dom.contains(point[0] - 2.0 * h) || !dom.contains(point[0] + 2.0 * h) {
        return Err(Error::ChartMargin(format!(
            "t = {} is within 2h of the domain boundary",
            point[0]
        )));
    }
    check_chart_margin(metric.chart(), &point[1..], 4.0 * h)?;
    let eval = |p: &[f64], out: &mut [f64]| metric.metric_diagonal(p, out);
    let k_at = |step: f64| -> f64 {
        let mj = fd_metric_jet(n, point, step, &eval, &[]);
        let area = {
            let ip = |u: &[f64], v: &[f64]| -> f64 { (0..n).map(|k| mj.g[k] * u[k] * v[k]).sum() };
            ip(x, x) * ip(y, y) - ip(x, y).powi(2)
        };
        if !(area > 1e-300) {
            return f64::NAN;
        }
        riemann(&mj).sectional(x, y, &mj.g)
    };
    let k1 = k_at(h);
    let k2 = k_at(h / 2.0);
    if k1.is_nan() || k2.is_nan() {
        return Err(Error::DegeneratePlane);
    }
    let value = (16.0 * k2 - k1) / 15.0;
    Ok(OracleValue {
        value,
        error: (k2 - k1).abs() / 15.0,
    })
}

/// A 2-plane at a point of a product metric, in frame terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneSpec {
    /// ∂_t ∧ e_i
    Radial(usize),
    /// e_i ∧ e_j
    Level(usize, usize),
    /// (e_i + a ∂_t) ∧ e_j
    Mixed(usize, usize, f64),
}

impl fmt::Display for PlaneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlaneSpec::Radial(i) => write!(f, "radial:{i}"),
            PlaneSpec::Level(i, j) => write!(f, "level:{i}-{j}"),
            PlaneSpec::Mixed(i, j, a) => write!(f, "mixed:{i}-{j}@{a}"),
        }
    }
}

impl PlaneSpec {
    /// Coordinate vectors spanning the plane, given the level coefficients at the point.
    pub fn vectors(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = g.len() + 1;
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        match *self {
            PlaneSpec::Radial(i) => {
                x[0] = 1.0;
                y[i + 1] = 1.0 / g[i].sqrt();
            }
            PlaneSpec::Level(i, j) => {
                x[i + 1] = 1.0 / g[i].sqrt();
                y[j + 1] = 1.0 / g[j].sqrt();
            }
            PlaneSpec::Mixed(i, j, a) => {
                x[i + 1] = 1.0 / g[i].sqrt();
                x[0] = a;
                y[j + 1] = 1.0 / g[j].sqrt();
            }
        }
        (x, y)
    }
}

/// Closed-form sectional curvature of a frame plane.
pub fn sectional_closed_form(
    metric: &DiagonalProductMetric,
    t: f64,
    theta: &[f64],
    plane: PlaneSpec,
) -> Result<f64> {
    match plane {
        PlaneSpec::Radial(i) => radial_curvature(metric, t, theta, i),
        PlaneSpec::Level(i, j) => level_curvature(metric, t, theta, i, j),
        PlaneSpec::Mixed(i, j, a) => {
            let g = jets(metric, t, theta)?;
            let m = metric.frame_size();
            let mut x = vec![0.0; m];
            let mut y = vec![0.0; m];
            x[i] = 1.0 / g[i].value.sqrt();
            y[j] = 1.0 / g[j].value.sqrt();
            mixed_curvature(metric, t, theta, &x, &y, a)
        }
    }
}

/// Every frame plane at a point: radial planes, level pairs and mixed planes with each slope.
pub fn frame_planes(frame_size: usize, slopes: &[f64]) -> Vec<PlaneSpec> {
    let mut planes: Vec<PlaneSpec> = (0..frame_size).map(PlaneSpec::Radial).collect();
    for i in 0..frame_size {
        for j in 0..frame_size {
            if i == j {
                continue;
            }
            if i < j {
                planes.push(PlaneSpec::Level(i, j));
            }
            for &a in slopes {
                planes.push(PlaneSpec::Mixed(i, j, a));
            }
        }
    }
    planes
}

/// Sampling densities of a band certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub t_points: usize,
    pub theta_points: usize,
    pub slopes: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl GridSpec {
    pub fn standard() -> Self {
        Self {
            t_points: 200,
            theta_points: 50,
            slopes: vec![0.0, 0.1, 1.0, 10.0, 1e3],
        }
    }
}

/// Direction of the inequality a certificate checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// sectional curvature ≤ bound
    CurvatureAtMost,
    /// principal curvature ≥ bound
    ConvexityAtLeast,
}

/// One sampled value of a band scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandSample {
    pub t: f64,
    pub theta_index: usize,
    pub plane: String,
    pub value: f64,
}

/// Outcome of a sampled band check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandCertificate {
    pub kind: BoundKind,
    pub band: Interval,
    pub bound: f64,
    /// Maximum curvature (or minimum principal curvature) over the grid.
    pub extreme: f64,
    pub at_t: f64,
    pub at_theta_index: usize,
    pub at_plane: String,
    pub samples: usize,
    pub violations: usize,
    pub grid: GridSpec,
    pub pass: bool,
}

fn band_times(band: Interval, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![0.5 * (band.lo + band.hi)];
    }
    (0..count)
        .map(|k| band.lo + band.width() * k as f64 / (count - 1) as f64)
        .collect()
}

/// All sampled values of a band scan, in grid order.
pub fn band_samples(
    metric: &DiagonalProductMetric,
    band: Interval,
    kind: BoundKind,
    grid: &GridSpec,
) -> Result<Vec<BandSample>> {
    let thetas = metric.chart().sample_points(grid.theta_points.max(1));
    let planes = frame_planes(metric.frame_size(), &grid.slopes);
    let rows: Result<Vec<Vec<BandSample>>> = band_times(band, grid.t_points)
        .into_par_iter()
        .map(|t| {
            let mut out = Vec::new();
            for (ti, theta) in thetas.iter().enumerate() {
                match kind {
                    BoundKind::CurvatureAtMost => {
                        for p in &planes {
                            out.push(BandSample {
                                t,
                                theta_index: ti,
                                plane: p.to_string(),
                                value: sectional_closed_form(metric, t, theta, *p)?,
                            });
                        }
                    }
                    BoundKind::ConvexityAtLeast => {
                        let s = shape_operator(metric, t, theta)?;
                        for (i, v) in s.eigenvalues.iter().enumerate() {
                            out.push(BandSample {
                                t,
                                theta_index: ti,
                                plane: format!("principal:{i}"),
                                value: *v,
                            });
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Check an upper curvature bound or a lower principal-curvature bound on a t-band.
/// A sample that is not finite counts as a violation.
pub fn curvature_band_certificate(
    metric: &DiagonalProductMetric,
    band: Interval,
    kind: BoundKind,
    bound: f64,
    grid: &GridSpec,
) -> Result<BandCertificate> {
    let samples = band_samples(metric, band, kind, grid)?;
    let worse = |a: f64, b: f64| match kind {
        BoundKind::CurvatureAtMost => a > b,
        BoundKind::ConvexityAtLeast => a < b,
    };
    let ok = |v: f64| match kind {
        BoundKind::CurvatureAtMost => v <= bound,
        BoundKind::ConvexityAtLeast => v >= bound,
    };
    let mut extreme = match kind {
        BoundKind::CurvatureAtMost => f64::NEG_INFINITY,
        BoundKind::ConvexityAtLeast => f64::INFINITY,
    };
    let mut at = 0;
    let mut violations = 0;
    for (k, s) in samples.iter().enumerate() {
        if !ok(s.value) {
            violations += 1;
        }
        if s.value.is_nan() || worse(s.value, extreme) {
            if s.value.is_nan() {
                extreme = f64::NAN;
                at = k;
                break;
            }
            extreme = s.value;
            at = k;
        }
    }
    let arg = samples.get(at);
    Ok(BandCertificate {
        kind,
        band,
        bound,
        extreme,
        at_t: arg.map_or(f64::NAN, |s| s.t),
        at_theta_index: arg.map_or(0, |s| s.theta_index),
        at_plane: arg.map_or_else(String::new, |s| s.plane.clone()),
        samples: samples.len(),
        violations,
        grid: grid.clone(),
        pass: violations == 0 && !samples.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::warped_product;
    use crate::profiles::{CoshWarp, SinWarp};
    use std::sync::Arc;

    #[test]
    fn sphere_oracle_is_one() {
        let m = warped_product(
            Arc::new(SinWarp),
            AngularChart::Hyperspherical { dim: 2 },
            Interval::new(0.01, 3.1),
        );
        let v = curvature_oracle(&m, &[1.0, 0.7, 0.3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((v.value - 1.0).abs() < 1e-6, "{v:?}");
        let v = curvature_oracle(&m, &[1.0, 0.7, 0.3], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        assert!((v.value - 1.0).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn cosh_surface_oracle_and_closed_form() {
        let m = warped_product(
            Arc::new(CoshWarp::UNIT),
            AngularChart::Circle,
            Interval::REAL,
        );
        let v = curvature_oracle(&m, &[0.4, 1.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v.value + 1.0).abs() < 1e-6);
        assert!((radial_curvature(&m, 0.4, &[1.0], 0).unwrap() + 1.0).abs() < 1e-14);
        assert_eq!(
            level_curvature(&m, 0.4, &[1.0], 0, 0),
            Err(Error::NoLevelPlanes)
        );
    }

    #[test]
    fn oracle_refuses_polar_points() {
        let m = warped_product(
            Arc::new(SinWarp),
            AngularChart::Hyperspherical { dim: 2 },
            Interval::new(0.01, 3.1),
        );
        let r = curvature_oracle(&m, &[1.0, 1e-3, 0.3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert!(matches!(r, Err(Error::ChartMargin(_))));
    }
}
