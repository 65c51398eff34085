//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always printed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anosov_forge::curvature::{curvature_oracle, frame_planes, sectional_closed_form, PlaneSpec};
use anosov_forge::dynamics::{
    eberlein_report, integrate_jacobi, riccati_mu, sample_starts, scan_samples, FlowGeometry,
    SampleDomain, SamplerSpec, TrackOptions,
};
use anosov_forge::extension::{
    condition_c2_eps_bound, condition_c4_r, run_pipeline, run_pipeline_scoped,
    smoothed_junction_jumps, unchanged_outside_bands, Instance, InstanceKind, InstanceSpec,
    PipelineReport, PipelineScope,
};
use anosov_forge::lens::{BoundaryVector, FanSpec, Lens, Side};
use anosov_forge::metrics::{
    deformation_metric, hyperbolic_funnel, rounding_metric, warped_product, AngularChart,
    AngularField, DiagonalProductMetric, EllipsoidCurvatures, EllipsoidMetric, LevelScale,
    ProductField, RoundField, WarpScale,
};
use anosov_forge::profiles::{glue_to_hyperbolic, CoshWarp, SinWarp, SinhWarp};
use anosov_forge::{Error, Interval};
use anosov_forge_cli::{cmd_verify, load_config, with_workers, RunConfig};

type Check = Result<String, String>;

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 1. gluing

/// u = (a sinh κs + b cosh κs)²/κ² and u' at s, written out independently of the library.
fn hyperbolic_profile(kappa: f64, a: f64, b: f64, s: f64) -> (f64, f64) {
    let p = a * (kappa * s).sinh() + b * (kappa * s).cosh();
    let q = a * (kappa * s).cosh() + b * (kappa * s).sinh();
    (p * p / (kappa * kappa), 2.0 * p * q / kappa)
}

/// Newton iteration on the two matching equations in (κ, s = τ + r), scaled by the targets.
fn newton_gluing(
    ell: f64,
    tau: f64,
    a: f64,
    b: f64,
    mut kappa: f64,
    mut s: f64,
) -> Option<(f64, f64)> {
    let f = ((ell * tau).exp() - 1.0) / ell;
    let fp = (ell * tau).exp();
    let resid = |k: f64, s: f64| {
        let (u, up) = hyperbolic_profile(k, a, b, s);
        [u / f - 1.0, up / fp - 1.0]
    };
    for _ in 0..100 {
        let r = resid(kappa, s);
        if r[0].abs().max(r[1].abs()) < 1e-14 {
            return Some((kappa, s));
        }
        let (hk, hs) = (1e-7 * kappa, 1e-7 * s.abs().max(1e-3));
        let rk1 = resid(kappa + hk, s);
        let rk0 = resid(kappa - hk, s);
        let rs1 = resid(kappa, s + hs);
        let rs0 = resid(kappa, s - hs);
        let j = [
            [
                (rk1[0] - rk0[0]) / (2.0 * hk),
                (rs1[0] - rs0[0]) / (2.0 * hs),
            ],
            [
                (rk1[1] - rk0[1]) / (2.0 * hk),
                (rs1[1] - rs0[1]) / (2.0 * hs),
            ],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        kappa -= (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        s -= (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
    }
    let r = resid(kappa, s);
    (r[0].abs().max(r[1].abs()) < 1e-12).then_some((kappa, s))
}

fn criterion_gluing() -> Check {
    let ells = [0.5, 1.0, 2.0, 4.0, 8.0];
    let taus = [0.5, 1.0, 2.0, 3.0, 4.0];
    let pairs = [(1.0, 0.0), (1.0, 1.0), (2.0, 1.0), (1.0, 2.0)];
    let (mut solved, mut below_threshold, mut ladders, mut worst) = (0, 0, 0, 0.0f64);
    for &tau in &taus {
        for &(a, b) in &pairs {
            let mut ladder = Vec::new();
            for &ell in &ells {
                let g = match glue_to_hyperbolic(ell, tau, a, b) {
                    Ok(g) => g,
                    Err(Error::GluingThreshold(_)) => {
                        below_threshold += 1;
                        continue;
                    }
                    Err(e) => return Err(format!("ℓ={ell} τ={tau} (a,b)=({a},{b}): {e}")),
                };
                let s = tau + g.r;
                let f = ((ell * tau).exp() - 1.0) / ell;
                let fp = (ell * tau).exp();
                let (u, up) = hyperbolic_profile(g.kappa, a, b, s);
                let res = ((u - f) / f).abs().max(((up - fp) / fp).abs());
                worst = worst.max(res);
                if !(res <= 1e-10) || !(g.r > -tau) || !(g.kappa > 0.0) {
                    return Err(format!(
                        "ℓ={ell} τ={tau} (a,b)=({a},{b}): residual {res:e}, r={}",
                        g.r
                    ));
                }
                let Some((k2, s2)) = newton_gluing(ell, tau, a, b, 1.05 * g.kappa, 1.05 * s) else {
                    return Err(format!(
                        "Newton oracle diverged at ℓ={ell} τ={tau} (a,b)=({a},{b})"
                    ));
                };
                if (k2 - g.kappa).abs() > 1e-8 * g.kappa || (s2 - s).abs() > 1e-8 * s.abs().max(1.0)
                {
                    return Err(format!(
                        "ℓ={ell} τ={tau} (a,b)=({a},{b}): solver κ={} s={s}, Newton κ={k2} s={s2}",
                        g.kappa
                    ));
                }
                ladder.push(g.kappa);
                solved += 1;
            }
            // κ² = E²/(4F²) + (b² − a²)/F with E = e^{ℓτ}, F = (E − 1)/ℓ: increasing in ℓ when
            // a² ≥ b²; otherwise the second term decreases and only the closed form is checked.
            if a * a >= b * b {
                if ladder.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(format!("κ not increasing along the ℓ ladder at τ={tau} (a,b)=({a},{b}): {ladder:?}"));
                }
                ladders += 1;
            } else {
                for (&ell, &kappa) in ells.iter().rev().zip(ladder.iter().rev()) {
                    let e = (ell * tau).exp();
                    let f = (e - 1.0) / ell;
                    let closed = (e * e / (4.0 * f * f) + (b * b - a * a) / f).sqrt();
                    if (kappa - closed).abs() > 1e-12 * closed {
                        return Err(format!("κ = {kappa} vs closed form {closed} at ℓ={ell} τ={tau} (a,b)=({a},{b})"));
                    }
                }
            }
        }
    }
    let g = glue_to_hyperbolic(1.0, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let closed = (std::f64::consts::E - 2.0) / (2.0 * (std::f64::consts::E - 1.0));
    ensure(
        solved > 0 && (g.kappa - closed).abs() < 1e-14,
        format!("{solved} solved, {below_threshold} below threshold, worst residual {worst:.1e}, {ladders} monotone κ ladders"),
    )
}

// ---------------------------------------------------------------- 2. curvature oracle

fn oracle_agreement(
    name: &str,
    metric: &DiagonalProductMetric,
    times: &[f64],
    points: usize,
) -> Result<(usize, f64), String> {
    let chart = metric.chart();
    let planes = frame_planes(metric.frame_size(), &[-1.0, 0.5, 2.0]);
    let (mut count, mut worst) = (0, 0.0f64);
    for (k, theta) in chart.sample_points(points).into_iter().enumerate() {
        let t = times[k % times.len()];
        let g: Vec<f64> = metric
            .coefficients(t, &theta)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|j| j.value)
            .collect();
        let mut point = vec![t];
        point.extend_from_slice(&theta);
        for plane in &planes {
            let exact =
                sectional_closed_form(metric, t, &theta, *plane).map_err(|e| e.to_string())?;
            let (x, y) = plane.vectors(&g);
            let fd = curvature_oracle(metric, &point, &x, &y).map_err(|e| e.to_string())?;
            let diff = (exact - fd.value).abs();
            let rel = diff / exact.abs().max(1e-300);
            if !(rel <= 1e-5 || diff <= 1e-7) {
                return Err(format!(
                    "{name} t={t} θ={theta:?} {plane}: closed {exact}, oracle {}",
                    fd.value
                ));
            }
            worst = worst.max(rel.min(diff));
            count += 1;
        }
    }
    Ok((count, worst))
}

fn criterion_oracle() -> Check {
    let s2 = AngularChart::Hyperspherical { dim: 2 };
    let eps = 0.05;
    let ell = 3.0;
    let g0: Arc<dyn AngularField> = Arc::new(EllipsoidMetric { axis: 1.3 });
    let lam: Arc<dyn AngularField> = Arc::new(EllipsoidCurvatures { axis: 1.3 });
    // h = 2·II for the ellipsoid: principal curvature times the metric, doubled
    let h: Arc<dyn AngularField> = Arc::new(ProductField {
        a: g0.clone(),
        b: lam.clone(),
        scale: 2.0,
    });
    let round: Arc<dyn AngularField> = Arc::new(RoundField {
        chart: s2,
        scale: 1.0,
    });
    let interior: Vec<f64> = (0..15)
        .map(|k| 0.01 + (1.0 + eps - 0.02) * k as f64 / 14.0)
        .collect();
    let cases: Vec<(&str, DiagonalProductMetric, Vec<f64>)> = vec![
        (
            "sphere",
            warped_product(Arc::new(SinWarp), s2, Interval::new(0.01, 3.1)),
            (0..15).map(|k| 0.2 + 2.7 * k as f64 / 14.0).collect(),
        ),
        (
            "hyperbolic",
            warped_product(Arc::new(SinhWarp), s2, Interval::new(0.01, 10.0)),
            (0..15).map(|k| 0.1 + 3.0 * k as f64 / 14.0).collect(),
        ),
        (
            "cosh-cylinder",
            warped_product(Arc::new(CoshWarp::UNIT), s2, Interval::REAL),
            (0..15).map(|k| -2.0 + 4.0 * k as f64 / 14.0).collect(),
        ),
        (
            "deformation",
            deformation_metric(s2, g0.clone(), lam.clone(), ell, eps).map_err(|e| e.to_string())?,
            interior.clone(),
        ),
        (
            "rounding",
            rounding_metric(s2, h, round, ell, eps).map_err(|e| e.to_string())?,
            interior,
        ),
    ];
    let (mut total, mut worst) = (0, 0.0f64);
    let mut parts = Vec::new();
    for (name, metric, times) in &cases {
        let (n, w) = oracle_agreement(name, metric, times, 15)?;
        total += n;
        worst = worst.max(w);
        parts.push(format!("{name} {n}"));
    }
    ensure(
        total >= 500,
        format!(
            "{total} configurations ({}), worst deviation {worst:.1e}",
            parts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 3. funnel

fn criterion_funnel(build: &PipelineReport) -> Check {
    let sm = build
        .artifacts
        .smoothed
        .as_ref()
        .ok_or("no smoothed extension")?;
    let ext = &sm.base;
    let (kappa, r_tilde, tau, delta) = (ext.kappa(), ext.r_tilde(), ext.tau(), sm.delta);
    let k2 = kappa * kappa;
    let metric = sm.metric();
    let lo = tau + delta;
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let t = lo + 5.0 * k as f64 / 999.0;
        let v = sectional_closed_form(&metric, t, &[0.3], PlaneSpec::Radial(0))
            .map_err(|e| e.to_string())?;
        worst = worst.max((v + k2).abs() / k2);
    }
    // the same end in dimension three: radial, level and mixed planes
    let s2 = AngularChart::Hyperspherical { dim: 2 };
    let end = hyperbolic_funnel(kappa, r_tilde, Interval::new(lo, f64::INFINITY), s2)
        .map_err(|e| e.to_string())?;
    let planes = frame_planes(2, &[0.0, 0.1, 1.0, 10.0, 1e3]);
    for (k, theta) in s2.sample_points(20).into_iter().enumerate() {
        let t = lo + 0.25 * k as f64;
        for p in &planes {
            let v = sectional_closed_form(&end, t, &theta, *p).map_err(|e| e.to_string())?;
            worst = worst.max((v + k2).abs() / k2);
        }
    }
    ensure(
        worst <= 1e-6,
        format!("κ = {kappa}, max |K + κ²|/κ² = {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 4. junctions

fn criterion_junctions(build: &PipelineReport) -> Check {
    let ext = build.artifacts.extension.as_ref().ok_or("no extension")?;
    let sm = build
        .artifacts
        .smoothed
        .as_ref()
        .ok_or("no smoothed extension")?;
    let j = &ext.junctions;
    let c1 = [&j[0], &j[2]]
        .iter()
        .map(|r| r.value.max(r.d1))
        .fold(0.0, f64::max);
    let jet = j[1].value.max(j[1].d1).max(j[1].d2);
    let jumps = smoothed_junction_jumps(sm);
    let d2 = jumps.iter().map(|r| r.d2).fold(0.0, f64::max);
    let sampled = unchanged_outside_bands(sm, 20_000);
    // independent sweep: bitwise equal jets away from both bands
    let (lo, tau) = (ext.collar.t_domain().lo, ext.tau());
    let mut exact = true;
    for k in 0..5000 {
        let t = lo + (tau + 4.0 - lo) * (k as f64 + 0.37) / 5000.0;
        if t.abs() >= sm.delta && (t - tau).abs() >= sm.delta {
            exact &= LevelScale::jet(sm.as_ref(), t) == LevelScale::jet(ext.as_ref(), t);
        }
    }
    ensure(
        c1 <= 1e-8 && jet <= 1e-8 && d2 <= 1e-6 && sampled && exact,
        format!(
            "C¹ mismatch at 0, τ: {c1:.1e}; jet at 1+ε: {jet:.1e}; smoothed d² jump {d2:.1e}; unchanged outside bands: {}",
            sampled && exact
        ),
    )
}

// ---------------------------------------------------------------- 5. band certificates

fn criterion_certificates(build: &PipelineReport) -> Check {
    let search = build.search.as_ref().ok_or("no search report")?;
    let p = build.params.as_ref().ok_or("no parameters")?;
    let c = &search.certificates;
    let m1 = p.m1.value;
    let grid_ok = [&c.deformation, &c.rounding, &c.near_boundary, &c.convexity]
        .iter()
        .all(|b| b.grid.t_points == 200 && b.grid.theta_points == 50 && b.grid.slopes.len() == 5);
    let bounds_ok = c.deformation.bound == -m1 * m1
        && c.rounding.bound == -m1 * m1
        && c.near_boundary.bound == p.k_g.value
        && c.convexity.bound <= p.lambda_min.value;
    // oracle spot checks inside the two negatively curved bands
    let ext = build.artifacts.extension.as_ref().ok_or("no extension")?;
    let metric = ext.metric();
    let eps = ext.eps;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..40 {
        let t = if k < 20 {
            eps + 0.01 + (1.0 - 0.02) * k as f64 / 19.0
        } else {
            1.0 + eps + 0.01 + (ext.tau() - 1.0 - eps - 0.02) * (k - 20) as f64 / 19.0
        };
        let v = curvature_oracle(&metric, &[t, 0.3], &[1.0, 0.0], &[0.0, 1.0])
            .map_err(|e| e.to_string())?;
        worst = worst.max(v.value);
    }
    ensure(
        c.pass && grid_ok && bounds_ok && worst <= -m1 * m1,
        format!(
            "ℓ* = {}, M₁ = {m1}: max K on [ε,1+ε] {:.4e}, rounding {:.4e} (≤ {}), K on [0,ε] {:.4e} ≤ K_g {:.4e}, min λ {:.6} ≥ {:.6}; oracle max {:.4e}",
            search.ell_star,
            c.deformation.extreme,
            c.rounding.extreme,
            -m1 * m1,
            c.near_boundary.extreme,
            p.k_g.value,
            c.convexity.extreme,
            p.lambda_min.value,
            worst
        ),
    )
}

// ---------------------------------------------------------------- 6–10. flow

fn criterion_travel_time(full: &PipelineReport) -> Check {
    let c = full.crossing.as_ref().ok_or("no crossing summary")?;
    ensure(
        c.pass
            && c.hypotheses_hold
            && c.crossings >= 100
            && c.worst_time_ratio <= 1.0
            && c.min_convexity_margin >= -1e-8,
        format!(
            "{} crossings, worst τ/bound {:.3}, min d″ − (1−d′²)λ {:.2e}, μ failures {}",
            c.crossings, c.worst_time_ratio, c.min_convexity_margin, c.mu_failures
        ),
    )
}

fn criterion_ledger(full: &PipelineReport) -> Check {
    let l = full.ledger.as_ref().ok_or("no ledger summary")?;
    ensure(
        l.pass && l.violations.is_empty() && l.through_collar_or_funnel >= 300,
        format!(
            "{} trajectories through the collar/funnel, {} checks, {} violations",
            l.through_collar_or_funnel,
            l.checks,
            l.violations.len()
        ),
    )
}

fn sphere_outcomes() -> Result<(Vec<anosov_forge::dynamics::SampleOutcome>, f64), String> {
    let inst = Instance::resolve(&InstanceSpec::named(InstanceKind::SphereCapControl))
        .map_err(|e| e.to_string())?;
    let geo = inst.completion();
    let dom = SampleDomain {
        b: inst.b,
        waist: inst.waist,
        outer: 0.0,
    };
    let starts = sample_starts(
        &geo,
        &dom,
        &SamplerSpec {
            total: 200,
            seed: 3,
        },
    );
    let horizon = 10.0;
    let opts = TrackOptions {
        horizon,
        ..TrackOptions::default()
    };
    Ok((
        scan_samples(&geo, &starts, &opts, false).map_err(|e| e.to_string())?,
        horizon,
    ))
}

fn criterion_conjugate(
    full: &PipelineReport,
    sphere: &[anosov_forge::dynamics::SampleOutcome],
) -> Check {
    let c = full.conjugate.as_ref().ok_or("no conjugate-point report")?;
    let first: Vec<f64> = sphere
        .iter()
        .filter_map(|o| o.zeros.first().copied())
        .collect();
    let worst = first.iter().map(|z| (z - PI).abs()).fold(0.0, f64::max);
    ensure(
        c.pass && c.samples == 1000 && c.horizon == 50.0 && c.with_zero == 0 && first.len() == sphere.len() && worst <= 1e-4,
        format!(
            "{} samples to horizon {}: {} with a conjugate point; sphere: {}/{} first zeros, max |z − π| = {worst:.1e}",
            c.samples,
            c.horizon,
            c.with_zero,
            first.len(),
            sphere.len()
        ),
    )
}

fn criterion_eberlein(
    full: &PipelineReport,
    sphere: &[anosov_forge::dynamics::SampleOutcome],
    sphere_h: f64,
) -> Check {
    let e = full.eberlein.as_ref().ok_or("no Eberlein report")?;
    let w = full.waist_rate.ok_or("no waist rate")?;
    let sphere_rep = eberlein_report(sphere, sphere_h, 10.0);
    let waist_ok = w.iter().all(|r| (r - 1.0).abs() <= 2e-2);
    ensure(
        e.pass && e.min_log_growth >= 10f64.ln() && e.min_rate > 0.0 && waist_ok && !sphere_rep.pass,
        format!(
            "min growth e^{:.2}, min rate {:.3}, waist rates [{:.4}, {:.4}]; sphere control fails on {}/{}",
            e.min_log_growth, e.min_rate, w[0], w[1], sphere_rep.failures, sphere_rep.samples
        ),
    )
}

fn criterion_riccati(full: &PipelineReport) -> Check {
    let geo = full.artifacts.geometry.as_ref().ok_or("no flow geometry")?;
    let starts = &full.artifacts.starts;
    let marks: Vec<f64> = (1..=80).map(|k| k as f64 * 0.25).collect();
    let opts = TrackOptions {
        horizon: 20.0,
        marks,
        ..full.config.integrator.options()
    };
    let (mut compared, mut worst) = (0usize, 0.0f64);
    for k in 0..100 {
        let start = starts[(k * starts.len()) / 100];
        let mu0 = -0.5 + 0.01 * k as f64;
        let ric = riccati_mu(geo.as_ref() as &dyn FlowGeometry, start, mu0, &opts)
            .map_err(|e| e.to_string())?;
        let jac = integrate_jacobi(geo.as_ref() as &dyn FlowGeometry, start, 1.0, mu0, &opts)
            .map_err(|e| e.to_string())?;
        for (r, j) in ric.samples.iter().zip(&jac.samples) {
            if (r.s - j.s).abs() > 1e-12 {
                return Err(format!("track {k}: sample grids differ"));
            }
            let (a, b) = (r.channels[0].mu, j.channels[0].mu);
            if a.abs() <= 1e3 && b.abs() <= 1e3 {
                worst = worst.max((a - b).abs());
                compared += 1;
            }
        }
    }
    ensure(
        worst <= 1e-6 && compared > 0,
        format!("100 tracks, {compared} samples, max |Δμ| = {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 11. lens

/// Composite Simpson rule.
fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn criterion_lens() -> Check {
    let geo = anosov_forge::dynamics::ScaleGeometry::surface(Arc::new(WarpScale {
        warp: Arc::new(CoshWarp::UNIT),
    }));
    let lens =
        Lens::new(geo, 1.0, Some(0.0), 1e3, &TrackOptions::default()).map_err(|e| e.to_string())?;
    let scatter = |angle: f64| {
        lens.scatter(&BoundaryVector {
            side: Side::Upper,
            theta: 0.0,
            angle,
        })
        .map_err(|e| e.to_string())
    };
    let meridian = scatter(0.0)?.length.finite().ok_or("meridian trapped")?;
    let trapped = scatter((1.0 / 1f64.cosh()).asin())?;
    let trapped_ok = trapped.clairaut_trapped && trapped.length.finite().is_none();

    let mut worst = 0.0f64;
    for c in [0.5, -0.5, 0.3, 0.8] {
        let rec = scatter((c / 1f64.cosh()).asin())?;
        let l = rec.length.finite().ok_or("generic record trapped")?;
        let dtheta = rec.exit.ok_or("no exit")?.theta - rec.entry.theta;
        let speed = |t: f64| (1.0 - c * c / t.cosh().powi(2)).sqrt();
        let l_q = simpson(-1.0, 1.0, 20_000, |t| 1.0 / speed(t));
        let th_q = simpson(-1.0, 1.0, 20_000, |t| c / t.cosh().powi(2) / speed(t));
        worst = worst.max((l - l_q).abs()).max((dtheta - th_q).abs());
    }
    let fan = FanSpec {
        sides: vec![Side::Upper],
        thetas: 32,
        angles: 64,
        reciprocity: true,
    };
    let table = lens.lens_table(&fan).map_err(|e| e.to_string())?;
    ensure(
        (meridian - 2.0).abs() <= 1e-8 && trapped_ok && worst <= 1e-6 && table.max_reciprocity_error <= 1e-6,
        format!(
            "meridian l = {meridian:.12}, c = 1 trapped: {trapped_ok}, quadrature deviation {worst:.1e}, reciprocity over {} rows {:.1e}",
            table.rows.len(),
            table.max_reciprocity_error
        ),
    )
}

// ---------------------------------------------------------------- 12. ledger values

fn criterion_conditions(build: &PipelineReport) -> Check {
    let r = condition_c4_r(1.0, 1.0);
    let e = condition_c2_eps_bound(1.0, 1.0, 1.0);
    let p = build.params.as_ref().ok_or("no parameters")?;
    let checks = p.check_conditions();
    let all = checks.iter().all(|c| c.pass) && build.conditions.iter().all(|c| c.pass);
    ensure(
        (r - 2.319811).abs() <= 1e-6 && (e - 6.250e-4).abs() <= 1e-7 && all && checks.len() == 4,
        format!("C4(1,1) = {r:.7}, C2(1,1,1) = {e:.4e}, emitted parameters satisfy C1–C4: {all}"),
    )
}

// ---------------------------------------------------------------- 13. determinism

fn criterion_determinism(cfg: &RunConfig) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = cfg.clone();
    cfg.scan.seed = 7;
    let mut reports = Vec::new();
    for workers in [1, 8] {
        let out = dir.path().join(format!("w{workers}"));
        let o = with_workers(Some(workers), || cmd_verify(&cfg, &out))
            .map_err(|e| e.to_string())?
            .map_err(|e| e.to_string())?;
        if !o.pass {
            return Err(format!("verify failed with {workers} workers"));
        }
        reports.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure(
        reports[0] == reports[1],
        format!(
            "report.json ({} bytes) identical for 1 and 8 workers",
            reports[0].len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let t_all = Instant::now();
    let cfg =
        load_config(&configs().join("cylinder.toml")).expect("bundled cylinder configuration");
    let pipeline = cfg.pipeline();

    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, msg) = match &r {
            Ok(m) => ("PASS", m.as_str()),
            Err(m) => ("FAIL", m.as_str()),
        };
        println!("{tag} criterion {n:>2} {name:<22} {msg} [{secs:.1}s]");
        results.push((n, name, r, secs));
    };

    record(1, "gluing", &mut criterion_gluing);
    record(2, "curvature-oracle", &mut criterion_oracle);

    let build = run_pipeline_scoped(&pipeline, PipelineScope::Build);
    let full = run_pipeline(&pipeline);
    let sphere = sphere_outcomes();
    let need = |r: &Result<PipelineReport, Error>| -> Result<(), String> {
        r.as_ref()
            .map(|_| ())
            .map_err(|e| format!("pipeline error: {e}"))
    };

    record(3, "funnel-curvature", &mut || {
        need(&build)?;
        criterion_funnel(build.as_ref().unwrap())
    });
    record(4, "junctions", &mut || {
        need(&build)?;
        criterion_junctions(build.as_ref().unwrap())
    });
    record(5, "band-certificates", &mut || {
        need(&build)?;
        criterion_certificates(build.as_ref().unwrap())
    });
    record(6, "travel-time", &mut || {
        need(&full)?;
        criterion_travel_time(full.as_ref().unwrap())
    });
    record(7, "mu-ledger", &mut || {
        need(&full)?;
        criterion_ledger(full.as_ref().unwrap())
    });
    record(8, "conjugate-points", &mut || {
        need(&full)?;
        let (s, _) = sphere.as_ref().map_err(|e| e.clone())?;
        criterion_conjugate(full.as_ref().unwrap(), s)
    });
    record(9, "eberlein", &mut || {
        need(&full)?;
        let (s, h) = sphere.as_ref().map_err(|e| e.clone())?;
        criterion_eberlein(full.as_ref().unwrap(), s, *h)
    });
    record(10, "riccati-jacobi", &mut || {
        need(&full)?;
        criterion_riccati(full.as_ref().unwrap())
    });
    record(11, "lens", &mut criterion_lens);
    record(12, "parameter-ledger", &mut || {
        need(&build)?;
        criterion_conditions(build.as_ref().unwrap())
    });
    record(13, "determinism", &mut || criterion_determinism(&cfg));

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        t_all.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
