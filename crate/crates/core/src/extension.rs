//! The parameter ledger, the searches for the thresholds ℓ* and η, and the pipeline that builds
//! the extension of a compact surface of revolution and verifies it.
//!
//! Every numeric parameter carries a [`Provenance`] tag saying whether it was an input,
//! measured on the collar, estimated by sampling, derived from the ledger, or found by search.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    band_samples, curvature_band_certificate, deformation_curvature_bound,
    deformation_tensor_constant, max_covariant_derivative, shape_operator, BandCertificate,
    BoundKind, GridSpec,
};
use crate::dynamics::{
    collar_crossing_check, conjugate_point_report, eberlein_report, integrate_track, mu_ledger,
    sample_starts, scan_samples, waist_rate, Channel, ChannelInit, CollarBand, ConjugateReport,
    EberleinReport, FlowGeometry, GeodesicStart, LedgerCheck, LedgerParams, Region, RegionMap,
    SampleDomain, SamplerSpec, ScaleGeometry, Track, TrackOptions,
};
use crate::error::{Error, Result};
use crate::metrics::{
    build_extension, smooth_extension, surface_collar, AngularField, CollarTrace,
    DiagonalProductMetric, ExtendedSurface, JunctionReport, LevelScale, PiecewiseExtensionMetric,
    SmoothedExtension, WarpScale,
};
use crate::profiles::{CoshWarp, Interval, Jet, LinearWarp, ScalarProfile, SinWarp};

/// Where a parameter value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Input,
    /// evaluated on the input collar
    Measured,
    /// sampled estimate with safety factor
    Estimated,
    /// computed from other parameters by a ledger condition
    Ledger,
    /// chosen inside a ledger bound
    Chosen,
    /// found by a certified search
    Searched,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tagged {
    pub value: f64,
    pub provenance: Provenance,
}

impl Tagged {
    pub fn new(value: f64, provenance: Provenance) -> Self {
        Self { value, provenance }
    }
}

/// (C4) R = 2/(Q₀+1)² + 1 + C₀/(Q₀+2) + (2/(Q₀+3))·artanh((Q₀+2)/(Q₀+3)).
pub fn condition_c4_r(q0: f64, c0: f64) -> f64 {
    2.0 / (q0 + 1.0).powi(2)
        + 1.0
        + c0 / (q0 + 2.0)
        + 2.0 / (q0 + 3.0) * ((q0 + 2.0) / (q0 + 3.0)).atanh()
}

/// (C2) upper bound for ε: (2/λ)·ln cosh(λ/(4K_g + 4(Q₀+2)²)).
pub fn condition_c2_eps_bound(lambda_min: f64, k_g: f64, q0: f64) -> f64 {
    2.0 / lambda_min
        * (lambda_min / (4.0 * k_g + 4.0 * (q0 + 2.0).powi(2)))
            .cosh()
            .ln()
}

/// Third term of (C3): (2/λ)·ln cosh(λ/(8K₀ + 8(Q₀+1)²)).
pub fn condition_c3_delta_bound(lambda_min: f64, k0: f64, q0: f64) -> f64 {
    2.0 / lambda_min
        * (lambda_min / (8.0 * k0 + 8.0 * (q0 + 1.0).powi(2)))
            .cosh()
            .ln()
}

/// Curvature bound on the smoothed collar band; strictly above K_g and positive.
pub fn collar_curvature_bound(k_g: f64) -> f64 {
    (2.0 * k_g).max(k_g + 1.0)
}

/// The resolved parameters of one construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtensionParams {
    pub q0: Tagged,
    pub c0: Tagged,
    pub m1: Tagged,
    pub m0: Tagged,
    pub eps: Tagged,
    pub delta: Tagged,
    pub delta0: Tagged,
    pub k_g: Tagged,
    pub k0: Tagged,
    pub lambda_min: Tagged,
    pub lambda_max: Tagged,
    pub r: Tagged,
    pub ell: Option<Tagged>,
    pub kappa: Option<Tagged>,
    pub r_tilde: Option<Tagged>,
    pub eta: Option<Tagged>,
}

/// Measured collar data the ledger needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollarMeasurements {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// sampled max |∇⁰h|
    pub d_h: f64,
    pub c1: f64,
    /// max{0, K^int} over the deformation band (0 for surfaces)
    pub k_int_max: f64,
    /// sampled maximum sectional curvature of the input collar
    pub k_collar_max: f64,
    /// max of the deformation-band bound and the collar curvature
    pub k_g: f64,
}

/// Principal curvatures of S₀, the tensor constant C₁ and K_g.
pub fn measure_collar(
    collar: &DiagonalProductMetric,
    samples: usize,
) -> Result<CollarMeasurements> {
    let chart = collar.chart();
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    for theta in chart.sample_points(samples) {
        let s = shape_operator(collar, 0.0, &theta)?;
        lambda_min = lambda_min.min(s.min);
        lambda_max = lambda_max.max(s.max);
    }
    if !(lambda_min > 0.0) {
        return Err(Error::Convexity(format!(
            "boundary principal curvature {lambda_min} is not positive"
        )));
    }
    let g0 = CollarTrace {
        collar: collar.clone(),
        derivative: false,
    };
    let h = CollarTrace {
        collar: collar.clone(),
        derivative: true,
    };
    let d_h = max_covariant_derivative(chart, &g0 as &dyn AngularField, &h, samples)?;
    let c1 = deformation_tensor_constant(d_h, lambda_min, lambda_max);
    let n = collar.dim();
    // Surfaces have no tangent planes to the levels.
    let k_int_max = 0.0;
    if n > 2 {
        return Err(Error::ParameterDomain(
            "the pipeline builds surface instances only".into(),
        ));
    }
    let collar_band = collar.t_domain();
    let k_collar_max = band_samples(
        collar,
        collar_band,
        BoundKind::CurvatureAtMost,
        &GridSpec::standard(),
    )?
    .iter()
    .map(|s| s.value)
    .fold(f64::NEG_INFINITY, f64::max);
    // The bound must also hold on the collar side of the boundary.
    let k_g = deformation_curvature_bound(n, k_int_max, c1, lambda_min).max(k_collar_max);
    Ok(CollarMeasurements {
        lambda_min,
        lambda_max,
        d_h,
        c1,
        k_int_max,
        k_collar_max,
        k_g,
    })
}

impl ExtensionParams {
    /// Fill the ledger: M₁ = Q₀+4, M₀ = M₁², ε and δ at the given fractions of their bounds,
    /// K₀ from K_g and R from (C4).
    pub fn from_ledger(
        q0: Tagged,
        c0: Tagged,
        m: &CollarMeasurements,
        delta0: f64,
        eps_fraction: f64,
        delta_fraction: f64,
    ) -> Result<Self> {
        for (name, f) in [("ε fraction", eps_fraction), ("δ fraction", delta_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::ParameterDomain(format!(
                    "{name} must lie in (0, 1), got {f}"
                )));
            }
        }
        if !(q0.value > 0.0) || !(c0.value >= 0.0) || !(delta0 > 0.0) {
            return Err(Error::ParameterDomain(
                "Q₀ > 0, C₀ ≥ 0 and δ₀ > 0 are required".into(),
            ));
        }
        let m1 = q0.value + 4.0;
        let eps = eps_fraction * condition_c2_eps_bound(m.lambda_min, m.k_g, q0.value);
        let k0 = collar_curvature_bound(m.k_g);
        let delta_bound =
            delta0
                .min(eps / 2.0)
                .min(condition_c3_delta_bound(m.lambda_min, k0, q0.value));
        Ok(Self {
            q0,
            c0,
            m1: Tagged::new(m1, Provenance::Ledger),
            m0: Tagged::new(m1 * m1, Provenance::Ledger),
            eps: Tagged::new(eps, Provenance::Chosen),
            delta: Tagged::new(delta_fraction * delta_bound, Provenance::Chosen),
            delta0: Tagged::new(delta0, Provenance::Input),
            k_g: Tagged::new(m.k_g, Provenance::Measured),
            k0: Tagged::new(k0, Provenance::Ledger),
            lambda_min: Tagged::new(m.lambda_min, Provenance::Measured),
            lambda_max: Tagged::new(m.lambda_max, Provenance::Measured),
            r: Tagged::new(condition_c4_r(q0.value, c0.value), Provenance::Ledger),
            ell: None,
            kappa: None,
            r_tilde: None,
            eta: None,
        })
    }

    /// Evaluate (C1)–(C4) on the stored values.
    pub fn check_conditions(&self) -> Vec<ConditionCheck> {
        let q0 = self.q0.value;
        let round = |a: f64, b: f64| (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs());
        let c2 = condition_c2_eps_bound(self.lambda_min.value, self.k_g.value, q0);
        let c3 = self
            .delta0
            .value
            .min(self.eps.value / 2.0)
            .min(condition_c3_delta_bound(
                self.lambda_min.value,
                self.k0.value,
                q0,
            ));
        let r = condition_c4_r(q0, self.c0.value);
        vec![
            ConditionCheck {
                name: "C1",
                value: self.m1.value,
                reference: q0 + 4.0,
                pass: round(self.m1.value, q0 + 4.0),
            },
            ConditionCheck {
                name: "C2",
                value: self.eps.value,
                reference: c2,
                pass: self.eps.value > 0.0 && self.eps.value < c2,
            },
            ConditionCheck {
                name: "C3",
                value: self.delta.value,
                reference: c3,
                pass: self.delta.value > 0.0 && self.delta.value < c3,
            },
            ConditionCheck {
                name: "C4",
                value: self.r.value,
                reference: r,
                pass: round(self.r.value, r),
            },
        ]
    }
}

/// One ledger condition: `value` compared with `reference` (equality for C1/C4, strict upper
/// bound for C2/C3).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub value: f64,
    pub reference: f64,
    pub pass: bool,
}

/// Sampling plan of the Q₀/C₀ estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSpec {
    /// Entry angles per boundary component.
    pub entries_per_side: usize,
    /// Length after which an entry counts as trapped.
    pub cutoff: f64,
    /// Largest ladder exponent: Q ∈ {1, 2, …, 2^max_rung}.
    pub max_rung: u32,
    pub safety: f64,
}

impl Default for EstimateSpec {
    fn default() -> Self {
        Self {
            entries_per_side: 500,
            cutoff: 100.0,
            max_rung: 10,
            safety: 1.5,
        }
    }
}

/// One sampled entry of the estimator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryEvidence {
    /// +1 for t = b, −1 for t = −b
    pub side: i8,
    /// angle from the inward normal
    pub angle: f64,
    pub clairaut: f64,
    pub trapped: bool,
    pub length: f64,
    /// exit μ for μ(0) = Q
    pub exit_mu: f64,
    /// ∫μ for μ(0) = Q
    pub integral: f64,
    /// exit μ for J(0) = 0
    pub exit_mu_zero_start: f64,
    pub zero_inside: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Q0C0Estimate {
    /// least passing ladder value
    pub q: f64,
    /// max(0, −min ∫μ)
    pub c: f64,
    pub q0: f64,
    pub c0: f64,
    pub entries: usize,
    pub trapped: usize,
    pub warning: Option<String>,
    #[serde(skip)]
    pub evidence: Vec<EntryEvidence>,
}

/// Entry vectors at t = ±b pointing into |t| < b.
pub fn boundary_entries(
    geo: &dyn FlowGeometry,
    b: f64,
    per_side: usize,
) -> Vec<(i8, f64, GeodesicStart)> {
    let mut out = Vec::with_capacity(2 * per_side);
    for side in [1i8, -1] {
        let t = side as f64 * b;
        let w = 1.0 / geo.radial(t).inv_c.sqrt();
        for k in 0..per_side {
            let angle = -PI / 2.0 + PI * (k as f64 + 0.5) / per_side as f64;
            let (sa, ca) = angle.sin_cos();
            out.push((
                side,
                angle,
                GeodesicStart {
                    t,
                    theta: 0.0,
                    v: -(side as f64) * ca,
                    c: w * sa,
                },
            ));
        }
    }
    out
}

/// Least Q on the ladder such that every sampled non-trapped entry with μ(0) = Q or J(0) = 0
/// exits with μ > −Q and without zero; C = max(0, −min ∫μ). Both are returned multiplied by the
/// safety factor.
pub fn estimate_q0_c0(
    geo: &dyn FlowGeometry,
    b: f64,
    spec: &EstimateSpec,
    base: &TrackOptions,
) -> Result<Q0C0Estimate> {
    if spec.entries_per_side == 0 || !(spec.cutoff > 0.0) || !(spec.safety >= 1.0) {
        return Err(Error::ParameterDomain("invalid estimator settings".into()));
    }
    let entries = boundary_entries(geo, b, spec.entries_per_side);
    let opts = TrackOptions {
        horizon: spec.cutoff,
        stop_levels: vec![b, -b],
        regions: None,
        marks: Vec::new(),
        ..base.clone()
    };
    for rung in 0..=spec.max_rung {
        let q = 2f64.powi(rung as i32);
        let evidence: Result<Vec<EntryEvidence>> = entries
            .par_iter()
            .map(|(side, angle, st)| {
                let tr = integrate_track(
                    geo,
                    *st,
                    &[
                        (Channel::InPlane, ChannelInit::Mu(q)),
                        (Channel::InPlane, ChannelInit::Mu(f64::INFINITY)),
                    ],
                    &opts,
                )?;
                let trapped = !matches!(tr.end, crate::dynamics::TrackEnd::StopLevel(_));
                let last = &tr.last;
                Ok(EntryEvidence {
                    side: *side,
                    angle: *angle,
                    clairaut: st.c,
                    trapped,
                    length: tr.length(),
                    exit_mu: last.channels[0].mu,
                    integral: last.channels[0].log_norm,
                    exit_mu_zero_start: last.channels[1].mu,
                    zero_inside: !tr.zeros.is_empty(),
                })
            })
            .collect();
        let evidence = evidence?;
        let exits: Vec<&EntryEvidence> = evidence.iter().filter(|e| !e.trapped).collect();
        let ok = exits
            .iter()
            .all(|e| !e.zero_inside && e.exit_mu > -q && e.exit_mu_zero_start > -q);
        if ok {
            let trapped = evidence.len() - exits.len();
            let c = exits.iter().map(|e| -e.integral).fold(0.0f64, f64::max);
            let warning = if exits.len() * 2 < evidence.len() {
                Some(format!(
                    "{trapped} of {} entries trapped at cutoff {}",
                    evidence.len(),
                    spec.cutoff
                ))
            } else {
                None
            };
            return Ok(Q0C0Estimate {
                q,
                c,
                q0: spec.safety * q,
                c0: spec.safety * c,
                entries: evidence.len(),
                trapped,
                warning,
                evidence,
            });
        }
    }
    Err(Error::SearchExhausted(format!(
        "no Q ≤ 2^{} bounds the sampled exit μ",
        spec.max_rung
    )))
}

/// Bounds checked at each ℓ candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchBounds {
    pub m0: f64,
    pub m1: f64,
    pub k_g: f64,
    pub lambda_min: f64,
    pub eps: f64,
}

impl SearchBounds {
    pub fn from_params(p: &ExtensionParams) -> Self {
        Self {
            m0: p.m0.value,
            m1: p.m1.value,
            k_g: p.k_g.value,
            lambda_min: p.lambda_min.value,
            eps: p.eps.value,
        }
    }
}

/// Relative slack for the convexity comparison at t = 0, where the principal curvature equals
/// λ_min(S₀) up to round-off.
pub const CONVEXITY_SLACK: f64 = 1e-12;

/// Certificates of one candidate ℓ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EllCertificates {
    pub ell: f64,
    pub kappa: f64,
    pub r_tilde: f64,
    /// curvature ≤ −M₀ on [ε, 1+ε]
    pub deformation: BandCertificate,
    /// curvature ≤ −M₀ on [1+ε, 2+2ε]
    pub rounding: BandCertificate,
    /// curvature ≤ K_g on [0, ε]
    pub near_boundary: BandCertificate,
    /// principal curvatures ≥ λ_min(S₀) on [0, ε]
    pub convexity: BandCertificate,
    pub kappa_ok: bool,
    pub r_tilde_ok: bool,
    pub pass: bool,
}

/// Run all band certificates for one extension.
pub fn certify_ell(
    ext: &Arc<PiecewiseExtensionMetric>,
    bounds: &SearchBounds,
    grid: &GridSpec,
) -> Result<EllCertificates> {
    let eps = ext.eps;
    let metric = ext.metric();
    let deformation = curvature_band_certificate(
        &metric,
        Interval::new(eps, 1.0 + eps),
        BoundKind::CurvatureAtMost,
        -bounds.m0,
        grid,
    )?;
    let rounding = curvature_band_certificate(
        &metric,
        Interval::new(1.0 + eps, ext.tau()),
        BoundKind::CurvatureAtMost,
        -bounds.m0,
        grid,
    )?;
    let near_boundary = curvature_band_certificate(
        &metric,
        Interval::new(0.0, eps),
        BoundKind::CurvatureAtMost,
        bounds.k_g,
        grid,
    )?;
    let convexity = curvature_band_certificate(
        &metric,
        Interval::new(0.0, eps),
        BoundKind::ConvexityAtLeast,
        bounds.lambda_min * (1.0 - CONVEXITY_SLACK),
        grid,
    )?;
    let kappa_ok = ext.kappa() > bounds.m1;
    let r_tilde_ok = ext.r_tilde() > -2.0 - 2.0 * eps;
    let pass = deformation.pass
        && rounding.pass
        && near_boundary.pass
        && convexity.pass
        && kappa_ok
        && r_tilde_ok;
    Ok(EllCertificates {
        ell: ext.ell,
        kappa: ext.kappa(),
        r_tilde: ext.r_tilde(),
        deformation,
        rounding,
        near_boundary,
        convexity,
        kappa_ok,
        r_tilde_ok,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchAttempt {
    pub ell: f64,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchReport {
    pub ell_star: f64,
    pub attempts: Vec<SearchAttempt>,
    pub certificates: EllCertificates,
}

/// Doubling search ℓ = start, 2·start, … up to `max_ell` for the first ℓ whose extension passes
/// every certificate.
pub fn search_l(
    builder: impl Fn(f64) -> Result<PiecewiseExtensionMetric>,
    bounds: &SearchBounds,
    grid: &GridSpec,
    start: f64,
    max_ell: f64,
) -> Result<(Arc<PiecewiseExtensionMetric>, SearchReport)> {
    if !(start > 0.0) || !(max_ell >= start) {
        return Err(Error::ParameterDomain("invalid ℓ search range".into()));
    }
    let mut attempts = Vec::new();
    let mut ell = start;
    while ell <= max_ell {
        match builder(ell) {
            Ok(ext) => {
                let ext = Arc::new(ext);
                let cert = certify_ell(&ext, bounds, grid)?;
                let note = failing_certificates(&cert);
                attempts.push(SearchAttempt {
                    ell,
                    pass: cert.pass,
                    note,
                });
                if cert.pass {
                    return Ok((
                        ext,
                        SearchReport {
                            ell_star: ell,
                            attempts,
                            certificates: cert,
                        },
                    ));
                }
            }
            Err(e) => attempts.push(SearchAttempt {
                ell,
                pass: false,
                note: e.to_string(),
            }),
        }
        ell *= 2.0;
    }
    Err(Error::SearchExhausted(format!(
        "no ℓ ≤ {max_ell} passes the curvature certificates"
    )))
}

fn failing_certificates(c: &EllCertificates) -> String {
    let mut v = Vec::new();
    for (name, ok) in [
        ("deformation", c.deformation.pass),
        ("rounding", c.rounding.pass),
        ("near-boundary", c.near_boundary.pass),
        ("convexity", c.convexity.pass),
        ("kappa", c.kappa_ok),
        ("r-tilde", c.r_tilde_ok),
    ] {
        if !ok {
            v.push(name);
        }
    }
    if v.is_empty() {
        "pass".into()
    } else {
        format!("failed: {}", v.join(","))
    }
}

/// Bounds the smoothed metric must satisfy on the two bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothingBounds {
    pub k0: f64,
    pub lambda_min: f64,
    pub m1: f64,
}

/// One named constraint of the smoothing step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub extreme: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingCertificate {
    pub delta: f64,
    pub eta: f64,
    pub halvings: u32,
    pub constraints: Vec<ConstraintCheck>,
    /// second-derivative jumps at the former junctions (relative)
    pub junctions: Vec<JunctionReport>,
    #[serde(skip)]
    pub smoothed: Option<Arc<SmoothedExtension>>,
}

fn band_extreme(
    metric: &DiagonalProductMetric,
    band: Interval,
    kind: BoundKind,
    bound: f64,
    grid: &GridSpec,
    name: &'static str,
) -> Result<ConstraintCheck> {
    let c = curvature_band_certificate(metric, band, kind, bound, grid)?;
    Ok(ConstraintCheck {
        name,
        extreme: c.extreme,
        bound,
        pass: c.pass,
    })
}

/// Check the five smoothing constraints for one η.
pub fn smoothing_constraints(
    sm: &Arc<SmoothedExtension>,
    bounds: &SmoothingBounds,
    grid: &GridSpec,
) -> Result<Vec<ConstraintCheck>> {
    let delta = sm.delta;
    let tau = sm.base.tau();
    let metric = sm.metric();
    // Open bands, sampled strictly inside.
    let inner = |c: f64| Interval::new(c - delta * (1.0 - 1e-9), c + delta * (1.0 - 1e-9));
    let mut min_slope = f64::INFINITY;
    let n = grid.t_points.max(2);
    for k in 0..n {
        let t = tau - delta + 2.0 * delta * (k as f64 + 0.5) / n as f64;
        min_slope = min_slope.min(sm.smoothed_warp(t).d1);
    }
    let negative = -(bounds.m1 - 1.0).powi(2);
    let mut out = vec![ConstraintCheck {
        name: "step1-monotone",
        extreme: min_slope,
        bound: 0.0,
        pass: min_slope > 0.0,
    }];
    let funnel_band = inner(tau);
    let radial_only = GridSpec {
        slopes: vec![f64::INFINITY],
        ..grid.clone()
    };
    if metric.dim() == 2 {
        out.push(band_extreme(
            &metric,
            funnel_band,
            BoundKind::CurvatureAtMost,
            negative,
            grid,
            "step1-radial",
        )?);
        out.push(ConstraintCheck {
            name: "step1-level",
            extreme: f64::NEG_INFINITY,
            bound: negative,
            pass: true,
        });
    } else {
        out.push(band_extreme(
            &metric,
            funnel_band,
            BoundKind::CurvatureAtMost,
            negative,
            &radial_only,
            "step1-radial",
        )?);
        out.push(band_extreme(
            &metric,
            funnel_band,
            BoundKind::CurvatureAtMost,
            negative,
            grid,
            "step1-level",
        )?);
    }
    out.push(band_extreme(
        &metric,
        inner(0.0),
        BoundKind::CurvatureAtMost,
        bounds.k0,
        grid,
        "step2-curvature",
    )?);
    out.push(band_extreme(
        &metric,
        inner(0.0),
        BoundKind::ConvexityAtLeast,
        bounds.lambda_min / 2.0,
        grid,
        "step2-convexity",
    )?);
    Ok(out)
}

/// Halve η from δ/2 until every smoothing constraint holds.
pub fn certify_smoothing(
    ext: Arc<PiecewiseExtensionMetric>,
    delta: f64,
    bounds: &SmoothingBounds,
    grid: &GridSpec,
    max_halvings: u32,
) -> Result<SmoothingCertificate> {
    let mut eta = delta / 2.0;
    let mut last = Vec::new();
    for halvings in 0..=max_halvings {
        let sm = Arc::new(smooth_extension(ext.clone(), delta, eta)?);
        let constraints = smoothing_constraints(&sm, bounds, grid)?;
        if constraints.iter().all(|c| c.pass) {
            let junctions = smoothed_junction_jumps(&sm);
            return Ok(SmoothingCertificate {
                delta,
                eta,
                halvings,
                constraints,
                junctions,
                smoothed: Some(sm),
            });
        }
        last = constraints;
        eta /= 2.0;
    }
    let failing = last.iter().find(|c| !c.pass).expect("a failing constraint");
    Err(Error::SmoothingThreshold {
        constraint: failing.name.to_string(),
        detail: format!(
            "extreme {} against bound {} after {max_halvings} halvings",
            failing.extreme, failing.bound
        ),
    })
}

/// Jump of ∂_t²c across t0, estimated from one-sided values at distances h and h/2 and
/// extrapolated linearly to 0; relative to max(|c''|, 1).
pub fn second_derivative_jump(scale: &dyn LevelScale, t0: f64, h: f64) -> f64 {
    let jump = |d: f64| scale.jet(t0 + d).d2 - scale.jet(t0 - d).d2;
    let extrapolated = 2.0 * jump(h / 2.0) - jump(h);
    extrapolated.abs() / scale.jet(t0).d2.abs().max(1.0)
}

/// Junction reports of the smoothed metric at t = 0 and t = 2+2ε.
pub fn smoothed_junction_jumps(sm: &Arc<SmoothedExtension>) -> Vec<JunctionReport> {
    let h = 1e-9;
    [
        ("collar|deformation", 0.0),
        ("rounding|funnel", sm.base.tau()),
    ]
    .into_iter()
    .map(|(label, t)| {
        let jet = |x: f64| LevelScale::jet(sm.as_ref(), x);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
        let (l, r) = (jet(t - h * 1e-3), jet(t + h * 1e-3));
        JunctionReport {
            label: label.to_string(),
            t,
            value: rel(l.value, r.value),
            d1: rel(l.d1, r.d1),
            d2: second_derivative_jump(sm.as_ref(), t, h),
        }
    })
    .collect()
}

/// True when the smoothed coefficients equal the unsmoothed ones bit for bit at every sampled
/// t farther than δ from both junctions.
pub fn unchanged_outside_bands(sm: &SmoothedExtension, points: usize) -> bool {
    let lo = sm.base.collar.t_domain().lo;
    let hi = sm.base.tau() + 3.0;
    let theta = [0.3];
    let (mut a, mut b) = ([Jet::ZERO], [Jet::ZERO]);
    (0..points).all(|k| {
        let t = lo + (hi - lo) * k as f64 / (points - 1).max(1) as f64;
        if t.abs() <= sm.delta || (t - sm.base.tau()).abs() <= sm.delta {
            return true;
        }
        crate::metrics::CoefficientFamily::coefficients(sm, t, &theta, &mut a);
        crate::metrics::CoefficientFamily::coefficients(sm.base.as_ref(), t, &theta, &mut b);
        a[0].value.to_bits() == b[0].value.to_bits()
            && a[0].d1.to_bits() == b[0].d1.to_bits()
            && a[0].d2.to_bits() == b[0].d2.to_bits()
    })
}

/// The runnable instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    /// dt² + cosh²t dθ² on |t| ≤ b (constant curvature −1, closed geodesic at t = 0)
    CoshCylinder,
    /// the Euclidean disk of radius b in polar form
    FlatStrip,
    /// the spherical cap of geodesic radius b < π/2
    SphereCapControl,
    /// dt² + (radius·cosh(rate·t))² dθ² on |t| ≤ b
    CustomProfile,
}

impl InstanceKind {
    pub fn label(&self) -> &'static str {
        match self {
            InstanceKind::CoshCylinder => "cosh-cylinder",
            InstanceKind::FlatStrip => "flat-strip",
            InstanceKind::SphereCapControl => "sphere-cap-control",
            InstanceKind::CustomProfile => "custom-profile",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    /// boundary at |t| = b
    #[serde(default)]
    pub b: Option<f64>,
    /// width of the collar handed to the extension (default b/2)
    #[serde(default)]
    pub collar_width: Option<f64>,
    /// margin δ₀ (default 0.1·collar width)
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub rate: Option<f64>,
}

impl InstanceSpec {
    pub fn named(kind: InstanceKind) -> Self {
        Self {
            kind,
            b: None,
            collar_width: None,
            delta0: None,
            radius: None,
            rate: None,
        }
    }
}

/// A resolved instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub kind: InstanceKind,
    pub core: Arc<dyn ScalarProfile>,
    pub b: f64,
    pub collar_width: f64,
    pub delta0: f64,
    /// t of the closed trapped geodesic
    pub waist: Option<f64>,
}

impl Instance {
    pub fn resolve(spec: &InstanceSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::ParameterDomain(m));
        let (core, b, waist): (Arc<dyn ScalarProfile>, f64, Option<f64>) = match spec.kind {
            InstanceKind::CoshCylinder => {
                if spec.radius.is_some() || spec.rate.is_some() {
                    return bad("radius/rate apply to custom-profile only".into());
                }
                (Arc::new(CoshWarp::UNIT), spec.b.unwrap_or(1.0), Some(0.0))
            }
            InstanceKind::FlatStrip => (
                Arc::new(LinearWarp {
                    offset: 0.0,
                    slope: 1.0,
                }),
                spec.b.unwrap_or(1.0),
                None,
            ),
            InstanceKind::SphereCapControl => {
                let b = spec.b.unwrap_or(1.0);
                if !(b < PI / 2.0) {
                    return bad(format!("sphere cap radius {b} must be below π/2"));
                }
                (Arc::new(SinWarp), b, None)
            }
            InstanceKind::CustomProfile => {
                let radius = spec.radius.unwrap_or(1.0);
                let rate = spec.rate.unwrap_or(1.0);
                if !(radius > 0.0 && rate > 0.0) {
                    return bad("custom-profile radius and rate must be positive".into());
                }
                (
                    Arc::new(CoshWarp { radius, rate }),
                    spec.b.unwrap_or(1.0),
                    Some(0.0),
                )
            }
        };
        if !(b > 0.0 && b.is_finite()) {
            return bad(format!("b = {b} must be positive"));
        }
        let collar_width = spec.collar_width.unwrap_or(b / 2.0);
        if !(collar_width > 0.0 && collar_width < b) {
            return bad(format!("collar width {collar_width} must lie in (0, b)"));
        }
        let delta0 = spec.delta0.unwrap_or(0.1 * collar_width);
        if !(delta0 > 0.0 && delta0 <= collar_width) {
            return bad(format!("δ₀ = {delta0} must lie in (0, collar width]"));
        }
        Ok(Self {
            kind: spec.kind,
            core,
            b,
            collar_width,
            delta0,
            waist,
        })
    }

    pub fn collar(&self) -> DiagonalProductMetric {
        surface_collar(self.core.clone(), self.b, self.collar_width)
    }

    /// The core profile on the whole line: the natural completion of the instance.
    pub fn completion(&self) -> ScaleGeometry {
        ScaleGeometry::surface(Arc::new(WarpScale {
            warp: self.core.clone(),
        }))
    }
}

/// Integrator settings shared by all flow stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSpec {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.25,
        }
    }
}

impl IntegratorSpec {
    pub fn options(&self) -> TrackOptions {
        TrackOptions {
            rtol: self.rtol,
            atol: self.atol,
            h_max: self.h_max,
            ..TrackOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtensionSpec {
    pub enabled: bool,
    /// ε as a fraction of its (C2) bound
    pub eps_fraction: f64,
    /// δ as a fraction of its (C3) bound
    pub delta_fraction: f64,
    /// explicit ε, replacing the fraction
    pub eps: Option<f64>,
    /// explicit δ, replacing the fraction
    pub delta: Option<f64>,
    pub start_ell: f64,
    pub max_ell: f64,
    pub max_eta_halvings: u32,
}

impl Default for ExtensionSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            eps_fraction: 0.5,
            delta_fraction: 0.5,
            eps: None,
            delta: None,
            start_ell: 1.0,
            max_ell: 1_048_576.0,
            max_eta_halvings: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSpec {
    pub samples: usize,
    pub horizon: f64,
    pub seed: u64,
    pub growth_factor: f64,
    /// incidence angles per direction in the collar crossing fan
    pub crossing_angles: usize,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            horizon: 50.0,
            seed: 0,
            growth_factor: 10.0,
            crossing_angles: 100,
        }
    }
}

/// Everything the pipeline needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub instance: InstanceSpec,
    pub extension: ExtensionSpec,
    pub estimate: EstimateSpec,
    pub grid: GridSpec,
    pub scan: ScanSpec,
    pub integrator: IntegratorSpec,
}

impl PipelineConfig {
    pub fn for_instance(kind: InstanceKind) -> Self {
        Self {
            instance: InstanceSpec::named(kind),
            extension: ExtensionSpec::default(),
            estimate: EstimateSpec::default(),
            grid: GridSpec::standard(),
            scan: ScanSpec::default(),
            integrator: IntegratorSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ParameterDomain(m.to_string()));
        Instance::resolve(&self.instance)?;
        if !(self.integrator.rtol > 0.0
            && self.integrator.atol > 0.0
            && self.integrator.h_max > 0.0)
        {
            return bad("integrator tolerances and h_max must be positive");
        }
        if self.grid.t_points == 0 || self.grid.theta_points == 0 || self.grid.slopes.is_empty() {
            return bad("curvature grid must be non-empty");
        }
        if self.scan.samples == 0 || !(self.scan.horizon > 0.0) || !(self.scan.growth_factor > 1.0)
        {
            return bad("scan needs samples > 0, horizon > 0 and growth factor > 1");
        }
        if self.estimate.entries_per_side == 0 || !(self.estimate.cutoff > 0.0) {
            return bad("estimator needs entries and a positive cutoff");
        }
        if !(self.estimate.safety >= 1.0) {
            return bad("estimator safety factor must be at least 1");
        }
        let e = &self.extension;
        if !(e.eps_fraction > 0.0 && e.eps_fraction < 1.0)
            || !(e.delta_fraction > 0.0 && e.delta_fraction < 1.0)
        {
            return bad("ε and δ fractions must lie in (0, 1)");
        }
        if e.eps.map_or(false, |x| !(x > 0.0)) || e.delta.map_or(false, |x| !(x > 0.0)) {
            return bad("explicit ε and δ must be positive");
        }
        if !(e.start_ell > 0.0 && e.max_ell >= e.start_ell) {
            return bad("ℓ search range must satisfy 0 < start ≤ max");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageOutcome {
    pub name: &'static str,
    pub status: StageStatus,
    pub message: String,
}

/// Constant-curvature check of the funnel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunnelCheck {
    pub kappa: f64,
    pub band: Interval,
    pub samples: usize,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Collar crossing statistics over the crossing fan and the scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossingSummary {
    pub bands: Vec<CollarBand>,
    pub hypotheses_hold: bool,
    pub crossings: usize,
    pub crossings_c1: usize,
    pub crossings_c2: usize,
    /// max τ_meas / bound
    pub worst_time_ratio: f64,
    pub min_convexity_margin: f64,
    pub mu_failures: usize,
    pub pass: bool,
}

/// A failed inequality with the start that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counterexample {
    pub sample: usize,
    pub start: GeodesicStart,
    pub check: LedgerCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub params: LedgerParams,
    pub trajectories: usize,
    pub through_collar_or_funnel: usize,
    pub checks: usize,
    /// check counts per rule, in rule order
    pub per_rule: Vec<(String, usize)>,
    /// D₋ segments bounded by two events (re-entering excursions) and how many are ≥ R
    pub finite_funnel_segments: usize,
    pub funnel_segments_below_r: usize,
    pub violations: Vec<Counterexample>,
    pub pass: bool,
}

/// The consolidated result of a run.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub instance: &'static str,
    pub extension_enabled: bool,
    pub config: PipelineConfig,
    pub stages: Vec<StageOutcome>,
    pub estimate: Option<Q0C0Estimate>,
    pub measurements: Option<CollarMeasurements>,
    pub params: Option<ExtensionParams>,
    pub conditions: Vec<ConditionCheck>,
    pub search: Option<SearchReport>,
    pub junctions: Vec<JunctionReport>,
    pub funnel: Option<FunnelCheck>,
    pub smoothing: Option<SmoothingCertificate>,
    pub unchanged_outside_bands: Option<bool>,
    pub conjugate: Option<ConjugateReport>,
    pub eberlein: Option<EberleinReport>,
    pub waist_rate: Option<[f64; 2]>,
    pub crossing: Option<CrossingSummary>,
    pub ledger: Option<LedgerSummary>,
    pub pass: bool,
    /// geometry of the final flow stage (not serialized)
    #[serde(skip)]
    pub artifacts: PipelineArtifacts,
}

/// Objects produced by the run that the CLI may dump.
#[derive(Clone, Debug, Default)]
pub struct PipelineArtifacts {
    pub extension: Option<Arc<PiecewiseExtensionMetric>>,
    pub smoothed: Option<Arc<SmoothedExtension>>,
    pub geometry: Option<Arc<ScaleGeometry>>,
    pub regions: Option<RegionMap>,
    pub starts: Vec<GeodesicStart>,
}

impl PipelineReport {
    fn new(config: &PipelineConfig) -> Self {
        Self {
            instance: config.instance.kind.label(),
            extension_enabled: config.extension.enabled,
            config: config.clone(),
            stages: Vec::new(),
            estimate: None,
            measurements: None,
            params: None,
            conditions: Vec::new(),
            search: None,
            junctions: Vec::new(),
            funnel: None,
            smoothing: None,
            unchanged_outside_bands: None,
            conjugate: None,
            eberlein: None,
            waist_rate: None,
            crossing: None,
            ledger: None,
            pass: false,
            artifacts: PipelineArtifacts::default(),
        }
    }

    fn stage(&mut self, name: &'static str, pass: bool, message: String) -> bool {
        self.stages.push(StageOutcome {
            name,
            status: if pass {
                StageStatus::Pass
            } else {
                StageStatus::Fail
            },
            message,
        });
        pass
    }

    fn skip_rest(&mut self, names: &[&'static str]) {
        for name in names {
            if !self.stages.iter().any(|s| s.name == *name) {
                self.stages.push(StageOutcome {
                    name,
                    status: StageStatus::Skipped,
                    message: "not run after an earlier failure".into(),
                });
            }
        }
    }

    pub fn stage_status(&self, name: &str) -> Option<StageStatus> {
        self.stages
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.status)
    }
}

/// Stage names in execution order.
pub const STAGES: [&str; 11] = [
    "estimate",
    "ledger",
    "search-l",
    "build",
    "funnel-curvature",
    "smoothing",
    "conjugate-points",
    "eberlein",
    "collar-crossing",
    "mu-ledger",
    "funnel-length",
];

/// Crossing fan: from just inside Σ₀ outward and from just inside D₋ inward, at
/// `count` incidence angles each, on both boundary components.
pub fn crossing_starts(
    geo: &dyn FlowGeometry,
    map: &RegionMap,
    count: usize,
) -> Vec<GeodesicStart> {
    let mut out = Vec::new();
    for side in [1.0, -1.0] {
        for (t_abs, outward) in [
            (map.b - map.delta - 1e-6, true),
            (map.b + map.eps + 1e-6, false),
        ] {
            let t = side * t_abs;
            let w = 1.0 / geo.radial(t).inv_c.sqrt();
            for k in 0..count {
                // angle from the normal, dense near grazing
                let x = (k as f64 + 0.5) / count as f64;
                let alpha = PI / 2.0 * (1.0 - (1.0 - x).powi(2));
                let dir = if outward { side } else { -side };
                out.push(GeodesicStart {
                    t,
                    theta: 0.0,
                    v: dir * alpha.cos(),
                    c: w * alpha.sin(),
                });
            }
        }
    }
    out
}

/// The collar bands with the constants used for the travel-time bound.
pub fn collar_bands(p: &ExtensionParams) -> Vec<CollarBand> {
    vec![
        CollarBand {
            region: Region::CollarC1,
            lo: -p.delta.value,
            hi: p.delta.value,
            kappa0: p.k0.value,
            lambda: p.lambda_min.value / 4.0,
            q: p.q0.value,
        },
        CollarBand {
            region: Region::CollarC2,
            lo: p.delta.value,
            hi: p.eps.value,
            kappa0: p.k_g.value,
            lambda: p.lambda_min.value / 2.0,
            q: p.q0.value + 1.0,
        },
    ]
}

/// Summaries of the collar crossings of a set of tracks.
pub fn summarize_crossings(tracks: &[&Track], bands: &[CollarBand]) -> CrossingSummary {
    let hypotheses_hold = bands.iter().all(|b| b.hypothesis_holds());
    let mut s = CrossingSummary {
        bands: bands.to_vec(),
        hypotheses_hold,
        crossings: 0,
        crossings_c1: 0,
        crossings_c2: 0,
        worst_time_ratio: 0.0,
        min_convexity_margin: f64::INFINITY,
        mu_failures: 0,
        pass: hypotheses_hold,
    };
    for tr in tracks {
        let rep = collar_crossing_check(tr, bands);
        s.pass &= rep.pass;
        for c in &rep.crossings {
            s.crossings += 1;
            match c.region {
                Region::CollarC1 => s.crossings_c1 += 1,
                _ => s.crossings_c2 += 1,
            }
            s.worst_time_ratio = s.worst_time_ratio.max(c.duration / c.bound);
            s.min_convexity_margin = s.min_convexity_margin.min(c.convexity_margin);
            if !c.mu_ok {
                s.mu_failures += 1;
            }
        }
    }
    s
}

/// Run the μ-ledger on every track that leaves Σ₀.
pub fn summarize_ledger(
    tracks: &[(usize, &Track)],
    map: &RegionMap,
    params: LedgerParams,
    r: f64,
) -> LedgerSummary {
    let mut per_rule: Vec<(String, usize)> = Vec::new();
    let mut violations = Vec::new();
    let mut through = 0;
    let mut checks = 0;
    let mut finite = 0;
    let mut short = 0;
    for (index, tr) in tracks {
        let outside = tr
            .samples
            .first()
            .map_or(false, |s| s.region != Region::Sigma0)
            || tr.events.iter().any(|e| e.to != Region::Sigma0);
        if !outside {
            continue;
        }
        through += 1;
        let rep = mu_ledger(tr, map, &params);
        checks += rep.checks.len();
        for c in &rep.checks {
            match per_rule.iter_mut().find(|(r, _)| r == c.rule) {
                Some(e) => e.1 += 1,
                None => per_rule.push((c.rule.to_string(), 1)),
            }
            if !c.pass {
                violations.push(Counterexample {
                    sample: *index,
                    start: tr.start,
                    check: c.clone(),
                });
            }
        }
        for (k, e) in tr.events.iter().enumerate() {
            if e.to == Region::FunnelD {
                if let Some(x) = tr.events[k + 1..]
                    .iter()
                    .find(|x| x.from == Region::FunnelD)
                {
                    finite += 1;
                    if x.s - e.s < r {
                        short += 1;
                    }
                }
            }
        }
    }
    per_rule.sort();
    LedgerSummary {
        params,
        trajectories: tracks.len(),
        through_collar_or_funnel: through,
        checks,
        per_rule,
        finite_funnel_segments: finite,
        funnel_segments_below_r: short,
        pass: violations.is_empty(),
        violations,
    }
}

/// How far the pipeline runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineScope {
    /// through smoothing: the metric and its certificates
    Build,
    /// every stage
    Full,
}

/// Estimate → ledger → search ℓ → build → smooth → certificates → scans → ledgers. Stops at
/// the first failing stage; remaining stages are reported as skipped.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    run_pipeline_scoped(config, PipelineScope::Full)
}

pub fn run_pipeline_scoped(
    config: &PipelineConfig,
    scope: PipelineScope,
) -> Result<PipelineReport> {
    config.validate()?;
    let inst = Instance::resolve(&config.instance)?;
    let mut rep = PipelineReport::new(config);
    let base_opts = config.integrator.options();
    let scan = &config.scan;
    let sampler = SamplerSpec {
        total: scan.samples,
        seed: scan.seed,
    };

    if !config.extension.enabled {
        let geo = Arc::new(inst.completion());
        let dom = SampleDomain {
            b: inst.b,
            waist: inst.waist,
            outer: 0.0,
        };
        let starts = sample_starts(geo.as_ref(), &dom, &sampler);
        let opts = TrackOptions {
            horizon: scan.horizon,
            ..base_opts.clone()
        };
        let outcomes = scan_samples(geo.as_ref(), &starts, &opts, false)?;
        let conj = conjugate_point_report(&outcomes, scan.horizon);
        let ok = rep.stage(
            "conjugate-points",
            conj.pass,
            format!(
                "{} of {} samples with a conjugate point",
                conj.with_zero, conj.samples
            ),
        );
        rep.conjugate = Some(conj);
        if ok {
            let eb = eberlein_report(&outcomes, scan.horizon, scan.growth_factor);
            rep.stage(
                "eberlein",
                eb.pass,
                format!(
                    "{} failing fields, min log-growth {:.6}",
                    eb.failures, eb.min_log_growth
                ),
            );
            rep.eberlein = Some(eb);
        }
        rep.skip_rest(&["conjugate-points", "eberlein"]);
        rep.pass = rep.stages.iter().all(|s| s.status == StageStatus::Pass);
        rep.artifacts.geometry = Some(geo);
        rep.artifacts.starts = starts;
        return Ok(rep);
    }

    let done = |rep: &mut PipelineReport| -> Result<PipelineReport> {
        rep.skip_rest(&STAGES);
        rep.pass = false;
        Ok(rep.clone())
    };

    // Q₀, C₀ on the compact core.
    let core_geo = inst.completion();
    let est = estimate_q0_c0(&core_geo, inst.b, &config.estimate, &base_opts)?;
    rep.stage(
        "estimate",
        true,
        format!(
            "Q = {}, C = {:.6e}, {} entries ({} trapped){}",
            est.q,
            est.c,
            est.entries,
            est.trapped,
            est.warning
                .as_ref()
                .map_or(String::new(), |w| format!("; warning: {w}"))
        ),
    );
    let q0 = Tagged::new(est.q0, Provenance::Estimated);
    let c0 = Tagged::new(est.c0, Provenance::Estimated);
    rep.estimate = Some(est);

    // Ledger.
    let collar = inst.collar();
    let meas = measure_collar(&collar, 64)?;
    rep.measurements = Some(meas);
    let mut params = ExtensionParams::from_ledger(
        q0,
        c0,
        &meas,
        inst.delta0,
        config.extension.eps_fraction,
        config.extension.delta_fraction,
    )?;
    if let Some(eps) = config.extension.eps {
        params.eps = Tagged::new(eps, Provenance::Input);
    }
    if let Some(delta) = config.extension.delta {
        params.delta = Tagged::new(delta, Provenance::Input);
    }
    rep.conditions = params.check_conditions();
    let ok = rep.conditions.iter().all(|c| c.pass);
    rep.params = Some(params.clone());
    if !rep.stage("ledger", ok, "conditions C1–C4".into()) {
        return done(&mut rep);
    }

    // ℓ search.
    let eps = params.eps.value;
    let delta = params.delta.value;
    let bounds = SearchBounds::from_params(&params);
    let builder = |ell: f64| build_extension(collar.clone(), ell, eps, delta);
    let searched = search_l(
        builder,
        &bounds,
        &config.grid,
        config.extension.start_ell,
        config.extension.max_ell,
    );
    let (ext, search) = match searched {
        Ok(x) => x,
        Err(e) => {
            rep.stage("search-l", false, e.to_string());
            return done(&mut rep);
        }
    };
    rep.stage(
        "search-l",
        true,
        format!("ℓ* = {}, κ = {:.12}", search.ell_star, ext.kappa()),
    );
    params.ell = Some(Tagged::new(search.ell_star, Provenance::Searched));
    params.kappa = Some(Tagged::new(ext.kappa(), Provenance::Searched));
    params.r_tilde = Some(Tagged::new(ext.r_tilde(), Provenance::Searched));
    rep.search = Some(search);
    rep.junctions = ext.junctions.clone();
    rep.stage(
        "build",
        true,
        format!(
            "junction mismatches (value, d1) ≤ {:.3e}",
            ext.junctions
                .iter()
                .map(|j| j.value.max(j.d1))
                .fold(0.0, f64::max)
        ),
    );

    // Funnel curvature.
    let tau = ext.tau();
    let band = Interval::new(tau, tau + 5.0);
    let samples = band_samples(
        &ext.metric(),
        band,
        BoundKind::CurvatureAtMost,
        &config.grid,
    )?;
    let k2 = ext.kappa() * ext.kappa();
    let max_deviation = samples
        .iter()
        .map(|s| (s.value + k2).abs())
        .fold(0.0, f64::max);
    let funnel = FunnelCheck {
        kappa: ext.kappa(),
        band,
        samples: samples.len(),
        max_deviation,
        pass: max_deviation <= 1e-6,
    };
    let ok = rep.stage(
        "funnel-curvature",
        funnel.pass,
        format!("max |K + κ²| = {max_deviation:.3e}"),
    );
    rep.funnel = Some(funnel);
    if !ok {
        return done(&mut rep);
    }

    // Smoothing.
    let sb = SmoothingBounds {
        k0: params.k0.value,
        lambda_min: params.lambda_min.value,
        m1: params.m1.value,
    };
    let cert = match certify_smoothing(
        ext.clone(),
        delta,
        &sb,
        &config.grid,
        config.extension.max_eta_halvings,
    ) {
        Ok(c) => c,
        Err(e) => {
            rep.stage("smoothing", false, e.to_string());
            return done(&mut rep);
        }
    };
    let sm = cert.smoothed.clone().expect("smoothed metric");
    let unchanged = unchanged_outside_bands(&sm, 4001);
    let jump = cert.junctions.iter().map(|j| j.d2).fold(0.0, f64::max);
    let ok = unchanged && jump <= 1e-6;
    params.eta = Some(Tagged::new(cert.eta, Provenance::Searched));
    rep.params = Some(params.clone());
    rep.unchanged_outside_bands = Some(unchanged);
    rep.stage(
        "smoothing",
        ok,
        format!(
            "η = {:.6e}, second-derivative jump {jump:.3e}, unchanged outside bands: {unchanged}",
            cert.eta
        ),
    );
    rep.smoothing = Some(cert);
    rep.artifacts.extension = Some(ext.clone());
    rep.artifacts.smoothed = Some(sm.clone());
    if !ok {
        return done(&mut rep);
    }

    // Flow on the extended surface.
    let surface = ExtendedSurface::new(inst.core.clone(), inst.b, sm.clone(), eps);
    let geo = Arc::new(ScaleGeometry::surface(Arc::new(surface)));
    let map = RegionMap {
        b: inst.b,
        delta,
        eps,
    };
    rep.artifacts.geometry = Some(geo.clone());
    rep.artifacts.regions = Some(map);
    if scope == PipelineScope::Build {
        rep.pass = rep.stages.iter().all(|s| s.status == StageStatus::Pass);
        return Ok(rep);
    }
    let dom = SampleDomain {
        b: inst.b,
        waist: inst.waist,
        outer: inst.b + tau + 3.0,
    };
    let starts = sample_starts(geo.as_ref(), &dom, &sampler);
    rep.artifacts.starts = starts.clone();
    let marks: Vec<f64> = (1..=scan.horizon.ceil() as usize)
        .map(|k| k as f64)
        .filter(|m| *m < scan.horizon)
        .collect();
    let opts = TrackOptions {
        horizon: scan.horizon,
        regions: Some(map),
        marks,
        ..base_opts.clone()
    };
    let outcomes = scan_samples(geo.as_ref(), &starts, &opts, true)?;
    let conj = conjugate_point_report(&outcomes, scan.horizon);
    let ok = rep.stage(
        "conjugate-points",
        conj.pass,
        format!(
            "{} of {} samples with a conjugate point",
            conj.with_zero, conj.samples
        ),
    );
    rep.conjugate = Some(conj);
    if !ok {
        return done(&mut rep);
    }
    let eb = eberlein_report(&outcomes, scan.horizon, scan.growth_factor);
    let mut ok = eb.pass;
    let mut msg = format!(
        "{} failing samples, min rate {:.6}",
        eb.failures, eb.min_rate
    );
    if let Some(w) = inst.waist {
        let r = waist_rate(
            geo.as_ref(),
            w,
            &TrackOptions {
                horizon: scan.horizon,
                ..base_opts.clone()
            },
        )?;
        msg.push_str(&format!(", waist rates {:.6} {:.6}", r[0], r[1]));
        rep.waist_rate = Some(r);
        ok &= r.iter().all(|x| *x > 0.0);
    }
    rep.stage("eberlein", ok, msg);
    rep.eberlein = Some(eb);
    if !ok {
        return done(&mut rep);
    }

    // Collar crossings: dedicated fan plus every scan track.
    let bands = collar_bands(&params);
    let fan = crossing_starts(geo.as_ref(), &map, scan.crossing_angles);
    let fan_opts = TrackOptions {
        horizon: 1.0,
        regions: Some(map),
        ..base_opts.clone()
    };
    let ch = [
        (Channel::InPlane, ChannelInit::Field { j: 0.0, jp: 1.0 }),
        (Channel::InPlane, ChannelInit::Field { j: 1.0, jp: 0.0 }),
    ];
    let fan_tracks: Result<Vec<Track>> = fan
        .par_iter()
        .map(|st| integrate_track(geo.as_ref(), *st, &ch, &fan_opts))
        .collect();
    let fan_tracks = fan_tracks?;
    let mut all: Vec<&Track> = fan_tracks.iter().collect();
    all.extend(outcomes.iter().filter_map(|o| o.track.as_ref()));
    let crossing = summarize_crossings(&all, &bands);
    let ok = rep.stage(
        "collar-crossing",
        crossing.pass,
        format!(
            "{} crossings, worst τ/bound {:.3e}, min convexity margin {:.3e}",
            crossing.crossings, crossing.worst_time_ratio, crossing.min_convexity_margin
        ),
    );
    rep.crossing = Some(crossing);
    if !ok {
        return done(&mut rep);
    }

    // μ-ledger over the scan tracks.
    let lp = LedgerParams {
        q0: params.q0.value,
        c0: params.c0.value,
    };
    let tracks: Vec<(usize, &Track)> = outcomes
        .iter()
        .filter_map(|o| o.track.as_ref().map(|t| (o.index, t)))
        .collect();
    let ledger = summarize_ledger(&tracks, &map, lp, params.r.value);
    let ok = rep.stage(
        "mu-ledger",
        ledger.pass,
        format!(
            "{} checks on {} trajectories through the collar/funnel, {} violations",
            ledger.checks,
            ledger.through_collar_or_funnel,
            ledger.violations.len()
        ),
    );
    let short = ledger.funnel_segments_below_r;
    let finite = ledger.finite_funnel_segments;
    rep.ledger = Some(ledger);
    if !ok {
        return done(&mut rep);
    }
    rep.stage(
        "funnel-length",
        short == 0,
        format!("{finite} finite funnel segments, {short} shorter than R"),
    );
    rep.pass = rep.stages.iter().all(|s| s.status == StageStatus::Pass);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c4_plug_in_values() {
        assert!((condition_c4_r(1.0, 1.0) - 2.319811).abs() < 1e-6);
        let v = 2.0 / 9.0 + 1.0 + 0.4 * 3f64.ln();
        assert!((condition_c4_r(2.0, 0.0) - v).abs() < 1e-14);
    }

    #[test]
    fn c2_plug_in_value() {
        let v = condition_c2_eps_bound(1.0, 1.0, 1.0);
        assert!((v - 2.0 * (1.0f64 / 40.0).cosh().ln()).abs() < 1e-16);
        assert!((v - 6.250e-4).abs() < 1e-7);
    }

    #[test]
    fn instance_ranges_are_validated() {
        let mut s = InstanceSpec::named(InstanceKind::SphereCapControl);
        s.b = Some(2.0);
        assert!(Instance::resolve(&s).is_err());
        let mut s = InstanceSpec::named(InstanceKind::CoshCylinder);
        s.collar_width = Some(1.5);
        assert!(Instance::resolve(&s).is_err());
    }
}
