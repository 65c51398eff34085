//! Invariants of the flow, the ledger, the lens and the smoothing, checked on random inputs.

use std::f64::consts::PI;
use std::sync::Arc;

use anosov_forge::dynamics::{
    integrate_geodesic, integrate_jacobi, riccati_mu, scalar_jacobi, GeodesicStart, ScaleGeometry,
    TrackOptions,
};
use anosov_forge::extension::{
    condition_c4_r, CollarMeasurements, ExtensionParams, Provenance, Tagged,
};
use anosov_forge::lens::{BoundaryVector, Lens, Side};
use anosov_forge::metrics::{
    build_extension, smooth_extension, surface_collar, LevelScale, WarpScale,
};
use anosov_forge::profiles::{glue_to_hyperbolic, CoshWarp};
use proptest::prelude::*;

fn cylinder() -> ScaleGeometry {
    ScaleGeometry::surface(Arc::new(WarpScale {
        warp: Arc::new(CoshWarp::UNIT),
    }))
}

fn field_at_end(tr: &anosov_forge::dynamics::Track) -> f64 {
    let c = &tr.last.channels[0];
    c.j * c.log_scale.exp()
}

fn zeros_of(k: impl Fn(f64) -> f64 + Send + Sync + 'static, horizon: f64) -> Vec<f64> {
    let opts = TrackOptions {
        horizon,
        ..TrackOptions::default()
    };
    scalar_jacobi(k, 0.0, 1.0, &opts)
        .unwrap()
        .zeros
        .iter()
        .map(|z| z.s)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reversed_geodesic_returns_to_its_start(
        t in -2.0f64..2.0,
        theta in 0.0f64..(2.0 * PI),
        angle in -1.5f64..1.5,
        length in 0.5f64..6.0,
    ) {
        let geo = cylinder();
        let start = GeodesicStart::from_angle(&geo, t, theta, angle);
        let opts = TrackOptions { horizon: length, ..TrackOptions::default() };
        let fwd = integrate_geodesic(&geo, start, &opts).unwrap();
        let back_start = GeodesicStart {
            t: fwd.last.t,
            theta: fwd.last.theta,
            v: -fwd.last.v,
            c: -start.c,
        };
        let back = integrate_geodesic(&geo, back_start, &opts).unwrap();
        prop_assert!((back.last.t - t).abs() < 1e-7, "t: {} vs {}", back.last.t, t);
        prop_assert!((back.last.theta - theta).abs() < 1e-7);
        prop_assert!((back.last.v + start.v).abs() < 1e-7);
    }

    #[test]
    fn fixed_step_error_shrinks_at_fourth_order_or_better(
        a in 0.2f64..1.5,
        b in 0.0f64..0.8,
    ) {
        let k = move |s: f64| -a - b * s.sin();
        let run = |h: f64| {
            let opts = TrackOptions {
                horizon: 2.0,
                fixed_step: Some(h),
                allow_riccati: false,
                ..TrackOptions::default()
            };
            field_at_end(&scalar_jacobi(k, 0.0, 1.0, &opts).unwrap())
        };
        let (y1, y2, y3) = (run(0.2), run(0.1), run(0.05));
        let ratio = (y1 - y2).abs() / (y2 - y3).abs();
        // successive differences shrink by 2^p for a method of order p
        prop_assert!(ratio >= 2f64.powf(3.8), "ratio {ratio}");
    }

    #[test]
    fn larger_curvature_brings_the_first_zero_earlier(
        a in 0.3f64..2.0,
        b in 0.0f64..0.25,
        d in 0.05f64..1.0,
    ) {
        let z1 = zeros_of(move |s: f64| a + b * s.cos(), 20.0);
        let z2 = zeros_of(move |s: f64| a + d + b * s.cos(), 20.0);
        prop_assert!(!z1.is_empty() && !z2.is_empty());
        prop_assert!(z2[0] <= z1[0] + 1e-10, "{} > {}", z2[0], z1[0]);
    }

    #[test]
    fn constant_curvature_zero_matches_closed_form(k in 0.1f64..9.0) {
        let z = zeros_of(move |_| k, 12.0);
        prop_assert!((z[0] - PI / k.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn riccati_and_jacobi_agree(
        t in -1.0f64..1.0,
        angle in -1.4f64..1.4,
        mu0 in -3.0f64..3.0,
    ) {
        let geo = cylinder();
        let start = GeodesicStart::from_angle(&geo, t, 0.3, angle);
        let marks: Vec<f64> = (1..=40).map(|k| k as f64 * 0.25).collect();
        let opts = TrackOptions { horizon: 10.0, marks, ..TrackOptions::default() };
        let ric = riccati_mu(&geo, start, mu0, &opts).unwrap();
        let jac = integrate_jacobi(&geo, start, 1.0, mu0, &opts).unwrap();
        prop_assert_eq!(ric.samples.len(), jac.samples.len());
        for (r, j) in ric.samples.iter().zip(&jac.samples) {
            let (mr, mj) = (r.channels[0].mu, j.channels[0].mu);
            if mr.abs() <= 1e3 && mj.abs() <= 1e3 {
                prop_assert!((mr - mj).abs() <= 1e-6 * mj.abs().max(1.0), "s = {}: {mr} vs {mj}", r.s);
            }
        }
    }

    #[test]
    fn ledger_conditions_hold_for_any_measurements(
        q0 in 0.5f64..8.0,
        c0 in 0.0f64..4.0,
        lambda_min in 0.05f64..3.0,
        spread in 1.0f64..3.0,
        k_g in 0.0f64..10.0,
        delta0 in 1e-4f64..1.0,
        eps_fraction in 0.05f64..0.95,
        delta_fraction in 0.05f64..0.95,
    ) {
        let m = CollarMeasurements {
            lambda_min,
            lambda_max: lambda_min * spread,
            d_h: 0.0,
            c1: 0.0,
            k_int_max: 0.0,
            k_collar_max: k_g,
            k_g,
        };
        let p = ExtensionParams::from_ledger(
            Tagged::new(q0, Provenance::Estimated),
            Tagged::new(c0, Provenance::Estimated),
            &m,
            delta0,
            eps_fraction,
            delta_fraction,
        )
        .unwrap();
        for c in p.check_conditions() {
            prop_assert!(c.pass, "{c:?}");
        }
        prop_assert!(p.delta.value < p.eps.value / 2.0);
        prop_assert!(p.k0.value > p.k_g.value);
        prop_assert_eq!(p.m0.value, p.m1.value * p.m1.value);
        prop_assert!(condition_c4_r(q0, c0) > 1.0);
    }

    #[test]
    fn gluing_matches_value_and_slope(
        ell in 0.5f64..8.0,
        tau in 0.5f64..4.0,
        a in 0.5f64..2.0,
        b in 0.0f64..0.4,
    ) {
        let f = ((ell * tau).exp() - 1.0) / ell;
        let disc = (2.0 * ell * tau).exp() - 4.0 * f * (a * a - b * b);
        match glue_to_hyperbolic(ell, tau, a, b) {
            Ok(g) => {
                prop_assert!(disc > 0.0);
                prop_assert!(g.kappa > 0.0);
                prop_assert!(g.r > -tau);
                prop_assert!(g.residual_value <= 1e-10 && g.residual_deriv <= 1e-10, "{g:?}");
            }
            // below the ℓ threshold there is no matching
            Err(e) => prop_assert!(matches!(e, anosov_forge::Error::GluingThreshold(_)), "{e}"),
        }
        if disc <= 0.0 {
            prop_assert!(glue_to_hyperbolic(ell, tau, a, b).is_err());
        }
    }

    #[test]
    fn lens_is_reciprocal_and_rotation_invariant(
        theta in 0.0f64..6.0,
        shift in 0.1f64..3.0,
        angle in -1.5f64..1.5,
        upper in any::<bool>(),
    ) {
        let lens = Lens::new(cylinder(), 1.0, Some(0.0), 1e3, &TrackOptions::default()).unwrap();
        let side = if upper { Side::Upper } else { Side::Lower };
        let entry = BoundaryVector { side, theta, angle };
        let rec = lens.scatter(&entry).unwrap();
        if rec.length.finite().is_some() {
            let err = lens.reciprocity_error(&rec).unwrap().unwrap();
            prop_assert!(err <= 1e-6, "reciprocity {err}");
            let moved = lens
                .scatter(&BoundaryVector { theta: theta + shift, ..entry })
                .unwrap();
            let (e0, e1) = (rec.exit.unwrap(), moved.exit.unwrap());
            prop_assert!((e1.theta - e0.theta - shift).abs() < 1e-9);
            prop_assert!((moved.length.finite().unwrap() - rec.length.finite().unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothing_changes_nothing_outside_its_bands(
        u in 0.0f64..1.0,
        eta_frac in 0.05f64..0.5,
    ) {
        let collar = surface_collar(Arc::new(CoshWarp::UNIT), 1.0, 0.5);
        let ext = Arc::new(build_extension(collar, 20.0, 0.05, 0.0125).unwrap());
        let delta = 0.02;
        let sm = smooth_extension(ext.clone(), delta, eta_frac * delta).unwrap();
        let t = -0.45 + u * (ext.tau() + 3.0);
        prop_assume!(t.abs() >= delta && (t - ext.tau()).abs() >= delta);
        prop_assert_eq!(sm.jet(t), ext.jet(t));
    }
}
