mod common;

use std::f64::consts::{PI, TAU};

use hopfid::ident::{
    estimate_i_point, estimate_period, estimate_z_point, fit_coefficients, fit_phi_c, identify,
    kappa_from_deviations, run_pulse_experiment, PhaseCandidate, PulseExperiment, PulseSetup,
};
use hopfid::{Error, HopfCoefficients, HopfField, LeloupField, LeloupParameters, Section};
use proptest::prelude::*;

fn setup_for(c: &HopfCoefficients) -> PulseSetup {
    PulseSetup {
        dt: common::self_test_config(c).dt,
        relax_time: 0.0,
        post_crossings: 10,
        baseline_period: c.period(),
    }
}

fn pulse(field: &HopfField, c: &HopfCoefficients, theta0: f64, m: f64, t0: f64) -> PulseExperiment {
    let section = Section::rising(0.0);
    run_pulse_experiment(field, &section, &c.orbit_point(-c.phi), theta0, m, t0, &setup_for(c), 0).unwrap()
}

#[test]
fn period_of_a_sine() {
    let omega = TAU / 24.0;
    let times: Vec<f64> = (0..30_000).map(|i| i as f64 * 0.01).collect();
    let outputs: Vec<f64> = times.iter().map(|t| (omega * t).sin()).collect();
    let est = estimate_period(&times, &outputs, &Section::rising(0.0), 10.0).unwrap();
    assert!((est.mean - 24.0).abs() < 1e-3);
    assert!(est.std_dev < 1e-3);

    let short = &outputs[..5000];
    assert!(matches!(
        estimate_period(&times[..5000], short, &Section::rising(0.0), 0.0),
        Err(Error::InsufficientData { .. })
    ));
}

#[test]
fn synthetic_geometric_decay() {
    let (kappa, period) = (-0.05, 24.0);
    let dev: Vec<f64> = (2..12).map(|k| 0.1 * (kappa * k as f64 * period).exp() * period).collect();
    let est = kappa_from_deviations(&dev, period, 1e-4).unwrap();
    assert!((est - kappa).abs() < 1e-6);
}

#[test]
fn null_pulse_does_nothing() {
    let c = HopfCoefficients::new(0.2, 1.0, -1.0, 0.3, 0.8).unwrap();
    let (field, _) = common::self_test_field(&c);
    let exp = pulse(&field, &c, 0.0, 0.0, 0.05);
    assert!(exp.crossing_times.len() >= 8);
    for d in exp.interval_deviations() {
        assert!(d.abs() < 1e-8, "{d}");
    }
    assert!(estimate_z_point(&exp).abs() < 1e-12);
    let floor = 1e-8;
    assert!(matches!(
        estimate_i_point(&exp, -0.4, floor),
        Ok(v) if v.abs() < 1e-12
    ) || matches!(estimate_i_point(&exp, -0.4, floor), Err(Error::DegenerateExperiment(_))));
}

#[test]
fn phase_response_sweep_matches_closed_form() {
    for c in common::hopf_grid(3, 5) {
        let (field, _) = common::self_test_field(&c);
        let cfg = common::self_test_config(&c);
        let peak = (-c.a / c.alpha).sqrt() * (1.0 + (c.b / c.a).powi(2)).sqrt();
        for j in 0..8 {
            let theta0 = j as f64 * PI / 4.0;
            let exp = pulse(&field, &c, theta0, cfg.magnitude, cfg.duration);
            let z = estimate_z_point(&exp);
            let truth = c.z_at(theta0);
            assert!((z - truth).abs() < 0.05 * peak, "{c:?} θ0 {theta0}: {z} vs {truth}");
        }
    }
}

#[test]
fn pulse_estimates_scale_linearly() {
    let c = HopfCoefficients::new(0.15, 0.8, -0.7, -0.4, 2.0).unwrap();
    let (field, _) = common::self_test_field(&c);
    let cfg = common::self_test_config(&c);
    let kappa = c.kappa1();
    for theta0 in [0.0, PI / 2.0] {
        let base = pulse(&field, &c, theta0, cfg.magnitude, cfg.duration);
        let scaled = pulse(&field, &c, theta0, 2.0 * cfg.magnitude, 0.5 * cfg.duration);
        let (z0, z1) = (estimate_z_point(&base), estimate_z_point(&scaled));
        assert!(common::relative_error(z1, z0) < 0.02, "Z {z0} vs {z1}");
        let i0 = estimate_i_point(&base, kappa, cfg.noise_floor).unwrap();
        let i1 = estimate_i_point(&scaled, kappa, cfg.noise_floor).unwrap();
        assert!(common::relative_error(i1, i0) < 0.02, "I {i0} vs {i1}");
    }
}

#[test]
fn amplitude_ratio_follows_the_cosine_shape() {
    let c = HopfCoefficients::new(0.1, 1.0, -0.5, 0.2, 0.6).unwrap();
    let (field, _) = common::self_test_field(&c);
    let cfg = common::self_test_config(&c);
    let i0 = estimate_i_point(&pulse(&field, &c, 0.0, cfg.magnitude, cfg.duration), c.kappa1(), cfg.noise_floor)
        .unwrap();
    let i1 = estimate_i_point(&pulse(&field, &c, PI / 2.0, cfg.magnitude, cfg.duration), c.kappa1(), cfg.noise_floor)
        .unwrap();
    let expected = (PI / 2.0 - c.phi).cos() / (-c.phi).cos();
    assert!(common::relative_error(i1 / i0, expected) < 0.10, "{} vs {expected}", i1 / i0);
}

#[test]
fn round_trip_on_the_hopf_grid() {
    for c in common::hopf_grid(4, 23) {
        let (field, section) = common::self_test_field(&c);
        let id = identify(&field, &section, &c.orbit_point(0.0), &common::self_test_config(&c)).unwrap();
        let r = &id.coeffs;
        for (name, got, want) in [("alpha", r.alpha, c.alpha), ("beta", r.beta, c.beta), ("a", r.a, c.a), ("b", r.b, c.b)] {
            let tol = 0.05 * want.abs();
            assert!((got - want).abs() <= tol, "{c:?}: {name} {got} vs {want}");
        }
        assert!(hopfid::wrap_pi(r.phi - c.phi).abs() < 0.05, "{c:?}: phi {}", r.phi);
        assert!(r.consistency().max() < 1e-10);
    }
}

#[test]
fn leloup_two_pulse_decay_rate() {
    let field = LeloupField::new(LeloupParameters::default()).unwrap();
    let cfg = hopfid::ident::IdentifyConfig {
        transient: 1000.0,
        magnitude: 0.2,
        duration: 0.1,
        post_crossings: 12,
        noise_floor: 1e-6,
        ..Default::default()
    };
    let id = identify(&field, &Section::rising(1.37), &common::leloup_initial_guess(), &cfg).unwrap();
    assert_eq!(id.experiments.len(), 2);
    assert!(common::relative_error(id.kappa, -0.0448) < 0.10, "kappa {}", id.kappa);
    assert!((id.period.mean - 23.72).abs() < 0.01);
    let omega = id.coeffs.omega();
    assert!(common::relative_error(TAU / omega, id.period.mean) < 0.01);
    assert!(id.fit.candidates[id.fit.selected].sin_coeff < 0.0);
}

#[test]
fn phi_c_candidates() {
    let [p, q] = fit_phi_c(1.0, 1.0).unwrap();
    assert!((p.phi - PI / 4.0).abs() < 1e-12 && (p.scale - 2f64.sqrt()).abs() < 1e-12);
    assert!((q.phi - 5.0 * PI / 4.0).abs() < 1e-12 && (q.scale + 2f64.sqrt()).abs() < 1e-12);
    assert!(matches!(fit_phi_c(0.0, 0.0), Err(Error::NoAmplitudeResponse)));
}

#[test]
fn both_candidates_positive_is_inconsistent() {
    // Z = +sin θ with φ ∈ {0, π}: one candidate gives A = 1, the other A = −1.
    let points = [(0.0, 0.0), (PI / 2.0, 1.0)];
    let cands = [PhaseCandidate { phi: 0.0, scale: 1.0 }, PhaseCandidate { phi: PI, scale: -1.0 }];
    let fit = fit_coefficients(&points, -2.0, TAU, &cands, f64::INFINITY).unwrap();
    assert!((fit.coeffs.phi - PI).abs() < 1e-12);
    let only_positive = [PhaseCandidate { phi: 0.0, scale: 1.0 }];
    assert!(matches!(
        fit_coefficients(&points, -2.0, TAU, &only_positive, f64::INFINITY),
        Err(Error::InconsistentData(_))
    ));
}

proptest! {
    #[test]
    fn fitted_coefficients_are_self_consistent(
        z0 in -3.0f64..3.0, z1 in -3.0f64..3.0, z2 in -3.0f64..3.0,
        kappa in -1.0f64..-0.01, period in 1.0f64..50.0, phi in 0.0f64..TAU,
    ) {
        let points = [(0.0, z0), (PI / 2.0, z1), (PI, z2)];
        let cands = [PhaseCandidate { phi, scale: 1.0 }, PhaseCandidate { phi: (phi + PI) % TAU, scale: -1.0 }];
        let Ok(fit) = fit_coefficients(&points, kappa, period, &cands, f64::INFINITY) else {
            return Ok(());
        };
        let c = fit.coeffs;
        prop_assert!(fit.candidates[fit.selected].sin_coeff < 0.0);
        prop_assert!(c.a < 0.0);
        prop_assert!((c.r0().powi(2) + c.alpha / c.a).abs() <= 1e-10 * c.r0().powi(2));
        prop_assert!((c.omega() - TAU / period).abs() <= 1e-10 * c.omega().abs());
        prop_assert!((c.kappa1() - kappa).abs() <= 1e-12 * kappa.abs());
        prop_assert!(c.consistency().max() < 1e-10);
    }

    #[test]
    fn kappa_fit_recovers_any_geometric_decay(
        kappa in -0.5f64..-0.001, period in 1.0f64..40.0, amp in 0.01f64..1.0, negative: bool,
    ) {
        let sign = if negative { -1.0 } else { 1.0 };
        let dev: Vec<f64> = (2..8).map(|k| sign * amp * period * (kappa * k as f64 * period).exp()).collect();
        let floor = dev[4].abs() / period * 0.5;
        prop_assume!(dev[2].abs() > floor * period);
        let est = kappa_from_deviations(&dev, period, floor).unwrap();
        prop_assert!((est - kappa).abs() < 1e-9 * kappa.abs().max(1.0));
    }
}
