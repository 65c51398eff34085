//! Product metrics dt² + g_t whose level metrics are diagonal in a fixed angular frame, and the
//! concrete families built from them: warped products, the deformation and rounding families,
//! the piecewise extension and its mollified version.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::profiles::{
    bump_rho, f_ell_unchecked, glue_to_hyperbolic, FunnelWarp, GluingSolution, Interval, Jet,
    RadialSample, ScalarProfile, Shifted,
};
use crate::quadrature::mollify_jets;

/// Parametrization of the level manifold S.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngularChart {
    /// S¹ with angle θ.
    Circle,
    /// S^dim in hyperspherical angles (φ₁, …, φ_{dim−1}, ϑ); polar angles lie in (0, π).
    Hyperspherical { dim: usize },
}

impl AngularChart {
    pub fn level_dim(&self) -> usize {
        match self {
            AngularChart::Circle => 1,
            AngularChart::Hyperspherical { dim } => *dim,
        }
    }

    /// Coefficients of the unit round metric: 1, sin²φ₁, sin²φ₁ sin²φ₂, …
    pub fn round_coefficients(&self, theta: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for k in 1..out.len() {
            let s = theta[k - 1].sin();
            out[k] = out[k - 1] * s * s;
        }
    }

    /// Distance of θ to the nearest chart singularity (polar angle 0 or π).
    pub fn polar_margin(&self, theta: &[f64]) -> f64 {
        match self {
            AngularChart::Circle => f64::INFINITY,
            AngularChart::Hyperspherical { dim } => theta[..dim - 1]
                .iter()
                .map(|&p| p.min(PI - p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `count` deterministic sample points spread over the chart (polar angles kept 0.15 away
    /// from the poles).
    pub fn sample_points(&self, count: usize) -> Vec<Vec<f64>> {
        let m = self.level_dim();
        let rates: Vec<f64> = (0..m)
            .map(|k| [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0][k % 6].sqrt().fract())
            .collect();
        (0..count)
            .map(|j| {
                (0..m)
                    .map(|k| {
                        let x = if m == 1 {
                            j as f64 / count as f64
                        } else {
                            ((j as f64 + 0.5) * rates[k]).fract()
                        };
                        if k + 1 < m {
                            0.15 + (PI - 0.3) * x
                        } else {
                            2.0 * PI * x
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// A field of positive numbers per frame direction on the level manifold (e.g. the diagonal
/// of g₀ or of h).
pub trait AngularField: Send + Sync + Debug {
    fn eval(&self, theta: &[f64], out: &mut [f64]);
    /// Number of directions when the field fixes it.
    fn len(&self) -> Option<usize> {
        None
    }
}

/// scale · (unit round metric).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoundField {
    pub chart: AngularChart,
    pub scale: f64,
}

impl AngularField for RoundField {
    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        self.chart.round_coefficients(theta, out);
        for o in out.iter_mut() {
            *o *= self.scale;
        }
    }
    fn len(&self) -> Option<usize> {
        Some(self.chart.level_dim())
    }
}

/// The same values at every point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantField(pub Vec<f64>);

impl AngularField for ConstantField {
    fn eval(&self, _theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn len(&self) -> Option<usize> {
        Some(self.0.len())
    }
}

/// scale · a · b, direction by direction.
#[derive(Clone, Debug)]
pub struct ProductField {
    pub a: Arc<dyn AngularField>,
    pub b: Arc<dyn AngularField>,
    pub scale: f64,
}

impl AngularField for ProductField {
    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.a.eval(theta, out);
        self.b.eval(theta, &mut tmp);
        for (o, b) in out.iter_mut().zip(&tmp) {
            *o *= self.scale * b;
        }
    }
    fn len(&self) -> Option<usize> {
        self.a.len().or(self.b.len())
    }
}

/// Induced metric of the ellipsoid of revolution x² + y² + z²/c² = 1 in (φ, ϑ):
/// (cos²φ + c² sin²φ) dφ² + sin²φ dϑ².
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EllipsoidMetric {
    pub axis: f64,
}

impl AngularField for EllipsoidMetric {
    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        let (s, c) = theta[0].sin_cos();
        out[0] = c * c + self.axis * self.axis * s * s;
        out[1] = s * s;
    }
    fn len(&self) -> Option<usize> {
        Some(2)
    }
}

/// Principal curvatures of the same ellipsoid along ∂_φ and ∂_ϑ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EllipsoidCurvatures {
    pub axis: f64,
}

impl AngularField for EllipsoidCurvatures {
    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        let (s, c) = theta[0].sin_cos();
        let e = c * c + self.axis * self.axis * s * s;
        out[0] = self.axis / (e * e.sqrt());
        out[1] = self.axis / e.sqrt();
    }
    fn len(&self) -> Option<usize> {
        Some(2)
    }
}

/// A family of level coefficients G_a(t, θ) with analytic t-derivatives.
pub trait CoefficientFamily: Send + Sync + Debug {
    fn chart(&self) -> AngularChart;
    fn t_domain(&self) -> Interval;
    fn coefficients(&self, t: f64, theta: &[f64], out: &mut [Jet]);
    /// Present when G_a(t, θ) = c(t)·(unit round metric)_a.
    fn level_scale(&self) -> Option<&dyn LevelScale> {
        None
    }
}

/// The scalar c(t) of a family with round levels c(t)·ds²_{n−1}.
pub trait LevelScale: Send + Sync + Debug {
    fn domain(&self) -> Interval;
    fn jet(&self, t: f64) -> Jet;
    /// Ratio-form radial data; stays finite where c overflows.
    fn sample(&self, t: f64) -> RadialSample {
        RadialSample::from_scale(self.jet(t))
    }
}

/// c = w² for a warp radius w.
#[derive(Clone, Debug)]
pub struct WarpScale {
    pub warp: Arc<dyn ScalarProfile>,
}

impl LevelScale for WarpScale {
    fn domain(&self) -> Interval {
        self.warp.domain()
    }
    fn jet(&self, t: f64) -> Jet {
        self.warp.eval(t).square()
    }
    fn sample(&self, t: f64) -> RadialSample {
        self.warp.warp_sample(t)
    }
}

/// G_a(t, θ) = c(t)·round_a(θ).
#[derive(Clone, Debug)]
pub struct RoundFamily {
    pub scale: Arc<dyn LevelScale>,
    pub chart: AngularChart,
    pub domain: Interval,
}

impl CoefficientFamily for RoundFamily {
    fn chart(&self) -> AngularChart {
        self.chart
    }
    fn t_domain(&self) -> Interval {
        self.domain
    }
    fn coefficients(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        fill_round(self.chart, self.scale.jet(t), theta, out);
    }
    fn level_scale(&self) -> Option<&dyn LevelScale> {
        Some(self.scale.as_ref())
    }
}

fn fill_round(chart: AngularChart, c: Jet, theta: &[f64], out: &mut [Jet]) {
    let mut round = [0.0; 8];
    let n = out.len();
    chart.round_coefficients(theta, &mut round[..n]);
    for (o, r) in out.iter_mut().zip(&round[..n]) {
        *o = c.scale(*r);
    }
}

/// A metric dt² + Σ G_a(t, θ) dθ_a² on t_domain × S.
#[derive(Clone, Debug)]
pub struct DiagonalProductMetric {
    family: Arc<dyn CoefficientFamily>,
}

impl DiagonalProductMetric {
    pub fn new(family: impl CoefficientFamily + 'static) -> Self {
        Self {
            family: Arc::new(family),
        }
    }

    pub fn from_arc(family: Arc<dyn CoefficientFamily>) -> Self {
        Self { family }
    }

    pub fn family(&self) -> &Arc<dyn CoefficientFamily> {
        &self.family
    }

    /// Manifold dimension n.
    pub fn dim(&self) -> usize {
        self.frame_size() + 1
    }

    pub fn frame_size(&self) -> usize {
        self.family.chart().level_dim()
    }

    pub fn chart(&self) -> AngularChart {
        self.family.chart()
    }

    pub fn t_domain(&self) -> Interval {
        self.family.t_domain()
    }

    pub fn level_scale(&self) -> Option<&dyn LevelScale> {
        self.family.level_scale()
    }

    /// Coefficient jets without domain checks.
    pub fn coefficients_into(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        self.family.coefficients(t, theta, out)
    }

    /// Coefficient jets at (t, θ); errors outside the t-domain or on a non-positive coefficient.
    pub fn coefficients(&self, t: f64, theta: &[f64]) -> Result<Vec<Jet>> {
        self.t_domain().check(t)?;
        if theta.len() != self.frame_size() {
            return Err(Error::Shape(format!(
                "θ has {} components, the chart needs {}",
                theta.len(),
                self.frame_size()
            )));
        }
        let mut out = vec![Jet::ZERO; self.frame_size()];
        self.coefficients_into(t, theta, &mut out);
        if let Some(bad) = out.iter().find(|g| !(g.value > 0.0)) {
            return Err(Error::DegenerateWarp(format!(
                "level coefficient {} at t = {t}",
                bad.value
            )));
        }
        Ok(out)
    }

    /// Diagonal of the full coordinate metric at x = (t, θ): (1, G_1, …, G_{n−1}).
    pub fn metric_diagonal(&self, x: &[f64], out: &mut [f64]) {
        let mut g = [Jet::ZERO; 8];
        let m = self.frame_size();
        self.coefficients_into(x[0], &x[1..], &mut g[..m]);
        out[0] = 1.0;
        for a in 0..m {
            out[a + 1] = g[a].value;
        }
    }
}

/// dt² + w(t)²·(unit round metric of the chart).
pub fn warped_product(
    warp: Arc<dyn ScalarProfile>,
    chart: AngularChart,
    domain: Interval,
) -> DiagonalProductMetric {
    DiagonalProductMetric::new(RoundFamily {
        scale: Arc::new(WarpScale { warp }),
        chart,
        domain,
    })
}

/// A surface dt² + w(t)² dθ² with boundary circles at t = b₋ and t = b₊.
#[derive(Clone, Debug)]
pub struct SurfaceOfRevolution {
    pub warp: Arc<dyn ScalarProfile>,
    pub domain: Interval,
    pub boundary: [f64; 2],
}

impl SurfaceOfRevolution {
    /// Validates w > 0 and finite curvature on a 2001-point sample of the (finite part of the)
    /// domain.
    pub fn new(warp: Arc<dyn ScalarProfile>, domain: Interval, boundary: [f64; 2]) -> Result<Self> {
        if !(boundary[0] < boundary[1])
            || !domain.contains(boundary[0])
            || !domain.contains(boundary[1])
        {
            return Err(Error::ParameterDomain(format!(
                "boundary {boundary:?} must be increasing and inside the domain"
            )));
        }
        let lo = domain.lo.max(boundary[0] - 10.0);
        let hi = domain.hi.min(boundary[1] + 10.0);
        for k in 0..=2000 {
            let t = lo + (hi - lo) * k as f64 / 2000.0;
            let w = warp.eval(t);
            if !(w.value > 0.0) || !w.is_finite() {
                return Err(Error::DegenerateWarp(format!("w({t}) = {}", w.value)));
            }
        }
        Ok(Self {
            warp,
            domain,
            boundary,
        })
    }

    pub fn metric(&self) -> DiagonalProductMetric {
        warped_product(self.warp.clone(), AngularChart::Circle, self.domain)
    }

    /// K = −w''/w.
    pub fn gauss_curvature(&self, t: f64) -> f64 {
        self.warp.warp_sample(t).k_radial
    }
}

/// The constant-curvature end w(t) = sinh(κ(t + r̃))/κ on `domain`.
pub fn hyperbolic_funnel(
    kappa: f64,
    r_tilde: f64,
    domain: Interval,
    chart: AngularChart,
) -> Result<DiagonalProductMetric> {
    let warp = FunnelWarp::new(kappa, r_tilde)?;
    if domain.lo <= -r_tilde {
        return Err(Error::DegenerateWarp(format!(
            "domain [{}, {}] reaches t = −r̃ = {}",
            domain.lo, domain.hi, -r_tilde
        )));
    }
    Ok(warped_product(Arc::new(warp), chart, domain))
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "{name} must be positive, got {x}"
        )))
    }
}

/// G_a = ρ(t−ε)·g0_a + 2 f_ℓ(t)·λ_a·g0_a on [0, 1+ε].
#[derive(Clone, Debug)]
pub struct DeformationFamily {
    pub chart: AngularChart,
    pub g0: Arc<dyn AngularField>,
    pub lambda: Arc<dyn AngularField>,
    pub ell: f64,
    pub eps: f64,
}

impl CoefficientFamily for DeformationFamily {
    fn chart(&self) -> AngularChart {
        self.chart
    }
    fn t_domain(&self) -> Interval {
        Interval::new(0.0, 1.0 + self.eps)
    }
    fn coefficients(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        let m = out.len();
        let mut g0 = [0.0; 8];
        let mut lam = [0.0; 8];
        self.g0.eval(theta, &mut g0[..m]);
        self.lambda.eval(theta, &mut lam[..m]);
        let r = bump_rho(t - self.eps);
        let f = f_ell_unchecked(self.ell, t);
        for a in 0..m {
            out[a] = r.scale(g0[a]) + f.scale(2.0 * lam[a] * g0[a]);
        }
    }
}

fn check_frame(chart: AngularChart, field: &dyn AngularField, name: &str) -> Result<()> {
    match field.len() {
        Some(k) if k != chart.level_dim() => Err(Error::Shape(format!(
            "{name} has {k} directions, the chart has {}",
            chart.level_dim()
        ))),
        _ => Ok(()),
    }
}

/// Checks an angular field for positivity on a chart sample.
fn check_field_positive(
    chart: AngularChart,
    field: &dyn AngularField,
    what: &str,
    convexity: bool,
) -> Result<()> {
    let m = chart.level_dim();
    let mut buf = vec![0.0; m];
    for theta in chart.sample_points(64) {
        field.eval(&theta, &mut buf);
        if let Some(v) = buf.iter().find(|v| !(**v > 0.0)) {
            let msg = format!("{what} = {v} at θ = {theta:?}");
            return Err(if convexity {
                Error::Convexity(msg)
            } else {
                Error::Shape(msg)
            });
        }
    }
    Ok(())
}

/// The deformation family that bends a strictly convex boundary into negative curvature.
pub fn deformation_metric(
    chart: AngularChart,
    g0: Arc<dyn AngularField>,
    lambda0: Arc<dyn AngularField>,
    ell: f64,
    eps: f64,
) -> Result<DiagonalProductMetric> {
    check_positive("ℓ", ell)?;
    check_positive("ε", eps)?;
    check_frame(chart, g0.as_ref(), "g0")?;
    check_frame(chart, lambda0.as_ref(), "λ")?;
    check_field_positive(chart, g0.as_ref(), "g0 coefficient", false)?;
    check_field_positive(chart, lambda0.as_ref(), "principal curvature", true)?;
    Ok(DiagonalProductMetric::new(DeformationFamily {
        chart,
        g0,
        lambda: lambda0,
        ell,
        eps,
    }))
}

/// G_a = f_ℓ(t+1+ε)·(ρ(t)·h_a + (1−ρ(t))·ĥ_a) on [0, 1+ε].
#[derive(Clone, Debug)]
pub struct RoundingFamily {
    pub chart: AngularChart,
    pub h: Arc<dyn AngularField>,
    pub hhat: Arc<dyn AngularField>,
    pub ell: f64,
    pub eps: f64,
}

impl CoefficientFamily for RoundingFamily {
    fn chart(&self) -> AngularChart {
        self.chart
    }
    fn t_domain(&self) -> Interval {
        Interval::new(0.0, 1.0 + self.eps)
    }
    fn coefficients(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        let m = out.len();
        let mut h = [0.0; 8];
        let mut hh = [0.0; 8];
        self.h.eval(theta, &mut h[..m]);
        self.hhat.eval(theta, &mut hh[..m]);
        let f = f_ell_unchecked(self.ell, t + 1.0 + self.eps);
        let r = bump_rho(t);
        for a in 0..m {
            let mix = r.scale(h[a] - hh[a]) + Jet::constant(hh[a]);
            out[a] = f.mul(mix);
        }
    }
}

/// The rounding family that turns h into the round metric ĥ while keeping the warp f_ℓ.
pub fn rounding_metric(
    chart: AngularChart,
    h: Arc<dyn AngularField>,
    hhat: Arc<dyn AngularField>,
    ell: f64,
    eps: f64,
) -> Result<DiagonalProductMetric> {
    check_positive("ℓ", ell)?;
    check_positive("ε", eps)?;
    check_frame(chart, h.as_ref(), "h")?;
    check_frame(chart, hhat.as_ref(), "ĥ")?;
    check_field_positive(chart, h.as_ref(), "h coefficient", false)?;
    check_field_positive(chart, hhat.as_ref(), "ĥ coefficient", false)?;
    Ok(DiagonalProductMetric::new(RoundingFamily {
        chart,
        h,
        hhat,
        ell,
        eps,
    }))
}

/// Value or first t-derivative of a metric's coefficients at t = 0.
#[derive(Clone, Debug)]
pub struct CollarTrace {
    pub collar: DiagonalProductMetric,
    pub derivative: bool,
}

impl AngularField for CollarTrace {
    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        let mut g = [Jet::ZERO; 8];
        let m = out.len();
        self.collar.coefficients_into(0.0, theta, &mut g[..m]);
        for a in 0..m {
            out[a] = if self.derivative { g[a].d1 } else { g[a].value };
        }
    }
}

/// Largest one-sided mismatch of the coefficients at one junction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JunctionReport {
    pub label: String,
    pub t: f64,
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl JunctionReport {
    pub fn order(&self, k: usize) -> f64 {
        [self.value, self.d1, self.d2][k]
    }
}

/// Which formula of the extension applies at t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionPiece {
    Collar,
    Deformation,
    Rounding,
    Funnel,
}

/// The four-piece C¹,¹ extension of a collar (−ε₀, 0] × S with strictly convex levels:
/// collar; ρ(t−ε)g₀ + f_ℓ(t)h; f_ℓ(t)(ρ(t−1−ε)h + (1−ρ)ĥ); (sinh(κ(t+r̃))/κ)²ĥ.
#[derive(Clone, Debug)]
pub struct PiecewiseExtensionMetric {
    pub collar: DiagonalProductMetric,
    pub ell: f64,
    pub eps: f64,
    pub delta: f64,
    pub gluing: GluingSolution,
    pub funnel: FunnelWarp,
    pub junctions: Vec<JunctionReport>,
    g0: Arc<dyn AngularField>,
    h: Arc<dyn AngularField>,
    hhat: RoundField,
    scalar: Option<[f64; 2]>,
}

impl PiecewiseExtensionMetric {
    pub fn kappa(&self) -> f64 {
        self.gluing.kappa
    }

    pub fn r_tilde(&self) -> f64 {
        self.gluing.r
    }

    /// Start of the funnel, 2 + 2ε.
    pub fn tau(&self) -> f64 {
        2.0 + 2.0 * self.eps
    }

    pub fn piece(&self, t: f64) -> ExtensionPiece {
        if t < 0.0 {
            ExtensionPiece::Collar
        } else if t < 1.0 + self.eps {
            ExtensionPiece::Deformation
        } else if t < self.tau() {
            ExtensionPiece::Rounding
        } else {
            ExtensionPiece::Funnel
        }
    }

    /// Weights (α, β, γ) with G = α g₀ + β h + γ ĥ for the given piece formula at t ≥ 0.
    pub fn weights(&self, piece: ExtensionPiece, t: f64) -> [Jet; 3] {
        match piece {
            ExtensionPiece::Deformation => [
                bump_rho(t - self.eps),
                f_ell_unchecked(self.ell, t),
                Jet::ZERO,
            ],
            ExtensionPiece::Rounding => {
                let f = f_ell_unchecked(self.ell, t);
                let fr = f.mul(bump_rho(t - 1.0 - self.eps));
                [Jet::ZERO, fr, f - fr]
            }
            ExtensionPiece::Funnel => [Jet::ZERO, Jet::ZERO, self.funnel.eval(t).square()],
            ExtensionPiece::Collar => [Jet::ZERO; 3],
        }
    }

    /// Coefficients from a specific piece formula (used for one-sided junction limits).
    pub fn piece_coefficients(
        &self,
        piece: ExtensionPiece,
        t: f64,
        theta: &[f64],
        out: &mut [Jet],
    ) {
        if piece == ExtensionPiece::Collar {
            self.collar.coefficients_into(t, theta, out);
            return;
        }
        let m = out.len();
        let (mut g0, mut h, mut hh) = ([0.0; 8], [0.0; 8], [0.0; 8]);
        self.g0.eval(theta, &mut g0[..m]);
        self.h.eval(theta, &mut h[..m]);
        self.hhat.eval(theta, &mut hh[..m]);
        let [a, b, c] = self.weights(piece, t);
        for k in 0..m {
            out[k] = a.scale(g0[k]) + b.scale(h[k]) + c.scale(hh[k]);
        }
    }

    fn scalar_piece(&self, piece: ExtensionPiece, t: f64) -> Jet {
        let [c0, c1] = self.scalar.expect("round collar");
        match piece {
            ExtensionPiece::Collar => self.collar.level_scale().expect("round collar").jet(t),
            _ => {
                let [a, b, c] = self.weights(piece, t);
                a.scale(c0) + b.scale(c1) + c
            }
        }
    }

    /// The unsmoothed extension as a metric.
    pub fn metric(self: &Arc<Self>) -> DiagonalProductMetric {
        DiagonalProductMetric::from_arc(self.clone())
    }
}

impl CoefficientFamily for PiecewiseExtensionMetric {
    fn chart(&self) -> AngularChart {
        self.collar.chart()
    }
    fn t_domain(&self) -> Interval {
        Interval::new(self.collar.t_domain().lo, f64::INFINITY)
    }
    fn coefficients(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        self.piece_coefficients(self.piece(t), t, theta, out)
    }
    fn level_scale(&self) -> Option<&dyn LevelScale> {
        self.scalar.map(|_| self as &dyn LevelScale)
    }
}

impl LevelScale for PiecewiseExtensionMetric {
    fn domain(&self) -> Interval {
        CoefficientFamily::t_domain(self)
    }
    fn jet(&self, t: f64) -> Jet {
        self.scalar_piece(self.piece(t), t)
    }
    fn sample(&self, t: f64) -> RadialSample {
        match self.piece(t) {
            ExtensionPiece::Funnel => self.funnel.warp_sample(t),
            ExtensionPiece::Collar => self.collar.level_scale().expect("round collar").sample(t),
            p => RadialSample::from_scale(self.scalar_piece(p, t)),
        }
    }
}

fn rel_mismatch(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Tolerance for value and first-derivative continuity (and the full jet at t = 1+ε).
pub const JUNCTION_TOLERANCE: f64 = 1e-8;

/// Assemble the four-piece extension of `collar` (a metric on a t-interval ending at 0 with
/// strictly convex levels); κ and r̃ solve the gluing problem at τ = 2 + 2ε with a = 1, b = 0.
pub fn build_extension(
    collar: DiagonalProductMetric,
    ell: f64,
    eps: f64,
    delta: f64,
) -> Result<PiecewiseExtensionMetric> {
    check_positive("ℓ", ell)?;
    check_positive("ε", eps)?;
    check_positive("δ", delta)?;
    let dom = collar.t_domain();
    if !(dom.lo <= -eps) || !(dom.hi >= 0.0) {
        return Err(Error::ParameterDomain(format!(
            "collar domain [{}, {}] must contain [−ε, 0] = [{}, 0]",
            dom.lo, dom.hi, -eps
        )));
    }
    let chart = collar.chart();
    let g0: Arc<dyn AngularField> = Arc::new(CollarTrace {
        collar: collar.clone(),
        derivative: false,
    });
    let h: Arc<dyn AngularField> = Arc::new(CollarTrace {
        collar: collar.clone(),
        derivative: true,
    });
    check_field_positive(chart, g0.as_ref(), "g0 coefficient", false)?;
    check_field_positive(chart, h.as_ref(), "second fundamental form 2·II", true)?;
    let tau = 2.0 + 2.0 * eps;
    let gluing = glue_to_hyperbolic(ell, tau, 1.0, 0.0)?;
    let funnel = FunnelWarp::new(gluing.kappa, gluing.r)?;
    let scalar = collar.level_scale().map(|s| {
        let c = s.jet(0.0);
        [c.value, c.d1]
    });
    let mut ext = PiecewiseExtensionMetric {
        collar,
        ell,
        eps,
        delta,
        gluing,
        funnel,
        junctions: Vec::new(),
        g0,
        h,
        hhat: RoundField { chart, scale: 1.0 },
        scalar,
    };
    use ExtensionPiece::*;
    let specs = [
        ("collar|deformation", 0.0, Collar, Deformation, 2usize),
        ("deformation|rounding", 1.0 + eps, Deformation, Rounding, 3),
        ("rounding|funnel", tau, Rounding, Funnel, 2),
    ];
    let m = chart.level_dim();
    let (mut left, mut right) = (vec![Jet::ZERO; m], vec![Jet::ZERO; m]);
    for (label, t, lp, rp, checked) in specs {
        let mut rep = JunctionReport {
            label: label.to_string(),
            t,
            value: 0.0,
            d1: 0.0,
            d2: 0.0,
        };
        for theta in chart.sample_points(16) {
            ext.piece_coefficients(lp, t, &theta, &mut left);
            ext.piece_coefficients(rp, t, &theta, &mut right);
            for (l, r) in left.iter().zip(&right) {
                rep.value = rep.value.max(rel_mismatch(l.value, r.value));
                rep.d1 = rep.d1.max(rel_mismatch(l.d1, r.d1));
                rep.d2 = rep.d2.max(rel_mismatch(l.d2, r.d2));
            }
        }
        for order in 0..checked {
            let mismatch = rep.order(order);
            if !(mismatch <= JUNCTION_TOLERANCE) {
                return Err(Error::Junction {
                    junction: t,
                    order,
                    mismatch,
                    tolerance: JUNCTION_TOLERANCE,
                });
            }
        }
        ext.junctions.push(rep);
    }
    Ok(ext)
}

/// β_δ(x) = ρ(2|x|/δ − 1): 1 on |x| ≤ δ/2, 0 on |x| ≥ δ.
pub fn band_cutoff(delta: f64, x: f64) -> Jet {
    let k = 2.0 / delta;
    let r = bump_rho(k * x.abs() - 1.0);
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    Jet::new(r.value, sign * k * r.d1, k * k * r.d2)
}

/// The mollified extension: identical to the piecewise metric outside the bands
/// |t| < δ and |t − (2+2ε)| < δ.
#[derive(Clone, Debug)]
pub struct SmoothedExtension {
    pub base: Arc<PiecewiseExtensionMetric>,
    pub delta: f64,
    pub eta: f64,
}

/// Which δ-band, if any, contains t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingBand {
    /// Around the collar junction t = 0 (coefficient-family mollification).
    Collar,
    /// Around the funnel junction t = 2+2ε (warp-function mollification).
    Funnel,
    None,
}

impl SmoothedExtension {
    pub fn band(&self, t: f64) -> SmoothingBand {
        if t.abs() < self.delta {
            SmoothingBand::Collar
        } else if (t - self.base.tau()).abs() < self.delta {
            SmoothingBand::Funnel
        } else {
            SmoothingBand::None
        }
    }

    /// The unmollified warp radius √(coefficient scale) near the funnel junction.
    fn funnel_side_warp(&self, x: f64) -> Jet {
        if x < self.base.tau() {
            f_ell_unchecked(self.base.ell, x).sqrt()
        } else {
            self.base.funnel.eval(x)
        }
    }

    /// Mollified, blended warp w̃ near t = 2+2ε.
    pub fn smoothed_warp(&self, t: f64) -> Jet {
        let tau = self.base.tau();
        let wbar = self.funnel_side_warp(t);
        let mut m = [Jet::ZERO];
        mollify_jets(self.eta, t, &[tau], &mut m, |x, buf| {
            buf[0] = self.funnel_side_warp(x)
        });
        blend(band_cutoff(self.delta, t - tau), wbar, m[0])
    }

    fn collar_band(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        self.base.coefficients(t, theta, out);
        let mut m = vec![Jet::ZERO; out.len()];
        mollify_jets(self.eta, t, &[0.0], &mut m, |x, buf| {
            self.base.coefficients(x, theta, buf)
        });
        let b = band_cutoff(self.delta, t);
        for (o, mm) in out.iter_mut().zip(&m) {
            *o = blend(b, *o, *mm);
        }
    }

    pub fn metric(self: &Arc<Self>) -> DiagonalProductMetric {
        DiagonalProductMetric::from_arc(self.clone())
    }
}

/// g + β(m − g)
fn blend(beta: Jet, g: Jet, m: Jet) -> Jet {
    g + beta.mul(m - g)
}

impl CoefficientFamily for SmoothedExtension {
    fn chart(&self) -> AngularChart {
        self.base.chart()
    }
    fn t_domain(&self) -> Interval {
        CoefficientFamily::t_domain(self.base.as_ref())
    }
    fn coefficients(&self, t: f64, theta: &[f64], out: &mut [Jet]) {
        match self.band(t) {
            SmoothingBand::None => self.base.coefficients(t, theta, out),
            SmoothingBand::Collar => self.collar_band(t, theta, out),
            SmoothingBand::Funnel => {
                let c = self.smoothed_warp(t).square();
                fill_round(self.chart(), c, theta, out);
            }
        }
    }
    fn level_scale(&self) -> Option<&dyn LevelScale> {
        self.base.scalar.map(|_| self as &dyn LevelScale)
    }
}

impl LevelScale for SmoothedExtension {
    fn domain(&self) -> Interval {
        CoefficientFamily::t_domain(self)
    }
    fn jet(&self, t: f64) -> Jet {
        match self.band(t) {
            SmoothingBand::None => self.base.jet(t),
            SmoothingBand::Funnel => self.smoothed_warp(t).square(),
            SmoothingBand::Collar => {
                let c = self.base.jet(t);
                let mut m = [Jet::ZERO];
                mollify_jets(self.eta, t, &[0.0], &mut m, |x, buf| {
                    buf[0] = self.base.jet(x)
                });
                blend(band_cutoff(self.delta, t), c, m[0])
            }
        }
    }
    fn sample(&self, t: f64) -> RadialSample {
        match self.band(t) {
            SmoothingBand::None => self.base.sample(t),
            SmoothingBand::Funnel => RadialSample::from_warp(self.smoothed_warp(t)),
            SmoothingBand::Collar => RadialSample::from_scale(self.jet(t)),
        }
    }
}

/// Mollify the extension inside the two δ-bands with a mollifier of width η. The η that makes
/// the curvature constraints hold is found by [`crate::extension::certify_smoothing`].
pub fn smooth_extension(
    ext: Arc<PiecewiseExtensionMetric>,
    delta: f64,
    eta: f64,
) -> Result<SmoothedExtension> {
    check_positive("δ", delta)?;
    check_positive("η", eta)?;
    if !(delta < ext.eps / 2.0) {
        return Err(Error::ParameterDomain(format!(
            "δ = {delta} must be below ε/2 = {}",
            ext.eps / 2.0
        )));
    }
    if !(eta <= delta / 2.0) {
        return Err(Error::ParameterDomain(format!(
            "η = {eta} must be at most δ/2 = {}",
            delta / 2.0
        )));
    }
    if ext.collar.t_domain().lo > -(delta + eta) {
        return Err(Error::ParameterDomain(
            "collar domain does not cover the smoothing band".into(),
        ));
    }
    Ok(SmoothedExtension {
        base: ext,
        delta,
        eta,
    })
}

/// A compact surface of revolution with both boundary circles extended: the core for
/// |t| − b < −ε/2 and the (possibly smoothed) extension in s = |t| − b otherwise.
#[derive(Clone, Debug)]
pub struct ExtendedSurface {
    pub core: Arc<dyn ScalarProfile>,
    pub b: f64,
    pub extension: Arc<dyn LevelScale>,
    pub switch: f64,
}

impl ExtendedSurface {
    pub fn new(
        core: Arc<dyn ScalarProfile>,
        b: f64,
        extension: Arc<dyn LevelScale>,
        eps: f64,
    ) -> Self {
        Self {
            core,
            b,
            extension,
            switch: -eps / 2.0,
        }
    }

    fn uses_core(&self, t: f64) -> bool {
        t.abs() - self.b < self.switch
    }
}

impl LevelScale for ExtendedSurface {
    fn domain(&self) -> Interval {
        Interval::REAL
    }
    fn jet(&self, t: f64) -> Jet {
        if self.uses_core(t) {
            self.core.eval(t).square()
        } else {
            let sign = t.signum();
            let j = self.extension.jet(t.abs() - self.b);
            Jet::new(j.value, sign * j.d1, j.d2)
        }
    }
    fn sample(&self, t: f64) -> RadialSample {
        if self.uses_core(t) {
            self.core.warp_sample(t)
        } else {
            let mut s = self.extension.sample(t.abs() - self.b);
            if t < 0.0 {
                s.shape = -s.shape;
            }
            s
        }
    }
}

/// The collar of a surface of revolution at its outer boundary circle t = b, in the
/// coordinate s = t − b on [−width, 0].
pub fn surface_collar(core: Arc<dyn ScalarProfile>, b: f64, width: f64) -> DiagonalProductMetric {
    let shifted: Arc<dyn ScalarProfile> = Arc::new(Shifted {
        inner: ArcProfile(core),
        shift: b,
    });
    warped_product(shifted, AngularChart::Circle, Interval::new(-width, 0.0))
}

/// Adapter so shared profiles can be wrapped by generic combinators.
#[derive(Clone, Debug)]
pub struct ArcProfile(pub Arc<dyn ScalarProfile>);

impl ScalarProfile for ArcProfile {
    fn domain(&self) -> Interval {
        self.0.domain()
    }
    fn eval(&self, t: f64) -> Jet {
        self.0.eval(t)
    }
    fn warp_sample(&self, t: f64) -> RadialSample {
        self.0.warp_sample(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::CoshWarp;

    fn cylinder_extension(ell: f64, eps: f64) -> PiecewiseExtensionMetric {
        let collar = surface_collar(Arc::new(CoshWarp::UNIT), 1.0, 0.5);
        build_extension(collar, ell, eps, eps / 4.0).unwrap()
    }

    #[test]
    fn round_coefficients_in_three_angles() {
        let chart = AngularChart::Hyperspherical { dim: 3 };
        let mut out = [0.0; 3];
        chart.round_coefficients(&[0.5, 1.0, 2.0], &mut out);
        let s1 = 0.5f64.sin().powi(2);
        assert_eq!(out, [1.0, s1, s1 * 1.0f64.sin().powi(2)]);
    }

    #[test]
    fn extension_junctions_are_continuous() {
        let ext = cylinder_extension(20.0, 0.05);
        assert_eq!(ext.junctions.len(), 3);
        for j in &ext.junctions {
            assert!(j.value <= 1e-8 && j.d1 <= 1e-8, "{j:?}");
        }
        assert!(ext.junctions[1].d2 <= 1e-8);
        assert!(ext.junctions[0].d2 > 1e-3);
    }

    #[test]
    fn smoothing_leaves_outside_bands_untouched() {
        let ext = Arc::new(cylinder_extension(20.0, 0.05));
        let sm = smooth_extension(ext.clone(), 0.02, 1e-3).unwrap();
        for t in [
            -0.3,
            0.02,
            0.5,
            1.05,
            ext.tau() + 0.02,
            ext.tau() - 0.021,
            3.0,
        ] {
            assert_eq!(sm.jet(t), ext.jet(t), "t = {t}");
        }
        assert!(smooth_extension(ext, 0.03, 1e-3).is_err());
    }

    #[test]
    fn non_convex_collar_is_rejected() {
        let collar = surface_collar(Arc::new(CoshWarp::UNIT), -0.5, 0.5);
        assert!(matches!(
            build_extension(collar, 20.0, 0.05, 0.01),
            Err(Error::Convexity(_))
        ));
    }
}
