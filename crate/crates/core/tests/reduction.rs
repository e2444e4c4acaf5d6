mod common;

use std::f64::consts::{PI, TAU};

use hopfid::ident::{estimate_kappa, estimate_z_point, observe_period, run_pulse_experiment, PulseSetup};
use hopfid::reduction::{
    adjoint_i, adjoint_z, find_limit_cycle, monodromy, phase_normalization_error, FourierCurve, LimitCycleOptions,
};
use hopfid::{Error, HopfCoefficients, HopfField, LeloupField, LeloupParameters, LinearOutput, Section};

fn options(dt: f64) -> LimitCycleOptions {
    LimitCycleOptions {
        dt,
        ..LimitCycleOptions::default()
    }
}

#[test]
fn unit_hopf_cycle_and_multipliers() {
    let c = HopfCoefficients::new(1.0, 1.0, -1.0, 0.0, 0.0).unwrap();
    let field = HopfField::new(c, LinearOutput::default());
    let lc = find_limit_cycle(&field, &Section::rising(0.0), &[0.5, 0.0], &options(1e-3)).unwrap();
    assert!((lc.period - TAU).abs() < 1e-6);
    let x = lc.state(0);
    assert!((x[0].hypot(x[1]) - 1.0).abs() < 1e-6);

    let fl = monodromy(&field, &lc).unwrap();
    assert!((fl.unit_multiplier().re - 1.0).abs() < 1e-3);
    let slow = fl.multipliers[fl.slow_index];
    assert!((slow.re - (-2.0 * TAU).exp()).abs() < 1e-7, "{slow}");
    assert!((fl.kappa1_real().unwrap() + 2.0).abs() < 1e-3);
}

#[test]
fn published_leloup_fit_kappa() {
    let c = HopfCoefficients::new(0.0224, 0.2721, -0.0106, -0.0034, 0.0).unwrap();
    let field = HopfField::new(c, LinearOutput::default());
    let lc = find_limit_cycle(&field, &Section::rising(0.0), &c.orbit_point(0.3), &options(0.01)).unwrap();
    let fl = monodromy(&field, &lc).unwrap();
    assert!((fl.kappa1_real().unwrap() + 0.0448).abs() < 1e-4);
}

#[test]
fn hopf_adjoints_match_closed_forms() {
    for c in common::hopf_grid(4, 11) {
        let (field, section) = common::self_test_field(&c);
        let lc = find_limit_cycle(&field, &section, &c.orbit_point(0.0), &options(c.period() / 4000.0)).unwrap();
        let z = adjoint_z(&field, &lc).unwrap();
        assert!(phase_normalization_error(&field, &lc, &z) < 1e-6);
        let thetas = lc.theta_grid();
        let truth: Vec<f64> = thetas.iter().map(|t| common::z_closed_form(&c, t - c.phi)).collect();
        let peak = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = z.response.iter().zip(&truth).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-3 * peak, "{c:?}: max error {err} vs peak {peak}");

        let fl = monodromy(&field, &lc).unwrap();
        let i = adjoint_i(&field, &lc, &fl, &z).unwrap();
        let shape: Vec<f64> = thetas.iter().map(|t| (t - c.phi).cos()).collect();
        let r = correlation(&i.response, &shape);
        assert!(r.abs() > 0.999, "{c:?}: correlation {r}");
    }
}

#[test]
fn multipliers_do_not_depend_on_the_section() {
    let c = HopfCoefficients::new(0.2, 0.9, -0.6, 0.3, 0.0).unwrap();
    let field = HopfField::new(c, LinearOutput::default());
    let mut slow = Vec::new();
    for threshold in [0.0, 0.3 * c.r0(), -0.5 * c.r0()] {
        let lc = find_limit_cycle(&field, &Section::rising(threshold), &c.orbit_point(1.0), &options(1e-3)).unwrap();
        let fl = monodromy(&field, &lc).unwrap();
        slow.push(fl.multipliers[fl.slow_index].re);
    }
    for s in &slow[1..] {
        assert!(common::relative_error(*s, slow[0]) < 1e-4, "{slow:?}");
    }
}

#[test]
fn monodromy_kappa_matches_pulse_decay_on_hopf() {
    let c = HopfCoefficients::new(0.08, 0.7, -0.5, 0.4, 0.0).unwrap();
    let (field, section) = common::self_test_field(&c);
    let lc = find_limit_cycle(&field, &section, &c.orbit_point(0.0), &options(1e-3)).unwrap();
    let from_monodromy = monodromy(&field, &lc).unwrap().kappa1_real().unwrap();

    let cfg = common::self_test_config(&c);
    let setup = PulseSetup {
        dt: cfg.dt,
        relax_time: 0.0,
        post_crossings: 10,
        baseline_period: lc.period,
    };
    let exp = run_pulse_experiment(&field, &section, &c.orbit_point(-c.phi), 0.0, cfg.magnitude, cfg.duration, &setup, 0)
        .unwrap();
    let from_pulse = estimate_kappa(&exp, cfg.noise_floor).unwrap();
    assert!(common::relative_error(from_pulse, from_monodromy) < 0.05, "{from_pulse} vs {from_monodromy}");
}

#[test]
fn fourier_curve_interpolates_closed_form() {
    let c = HopfCoefficients::new(0.1, 1.0, -1.0, 0.5, 0.7).unwrap();
    let n = 64;
    let samples: Vec<f64> = (0..n).map(|i| c.z_at(TAU * i as f64 / n as f64)).collect();
    let curve = FourierCurve::new(&samples);
    for theta in [0.05, 1.3, PI, 5.9] {
        assert!((curve.eval(theta) - c.z_at(theta)).abs() < 1e-12);
    }
}

mod leloup {
    use super::*;

    fn field() -> LeloupField {
        LeloupField::new(LeloupParameters::default()).unwrap()
    }

    fn relaxed() -> Vec<f64> {
        let f = field();
        let section = Section::rising(1.37);
        let (_, _, x) = observe_period(&f, &section, &common::leloup_initial_guess(), 0.01, 1000.0, 11, 0).unwrap();
        x
    }

    #[test]
    fn phase_response_matches_pulses() {
        let f = field();
        let section = Section::rising(1.37);
        let x = relaxed();
        let lc = find_limit_cycle(&f, &section, &x, &options(0.01)).unwrap();
        assert!((lc.period - 23.72).abs() < 0.01, "period {}", lc.period);
        let z = adjoint_z(&f, &lc).unwrap();
        let curve = FourierCurve::new(&z.response);
        let setup = PulseSetup {
            dt: 0.01,
            relax_time: 0.0,
            post_crossings: 10,
            baseline_period: lc.period,
        };
        for theta0 in [0.0, PI / 2.0] {
            let exp = run_pulse_experiment(&f, &section, &x, theta0, 0.2, 0.1, &setup, 0).unwrap();
            let pulse = estimate_z_point(&exp);
            let adjoint = curve.eval(theta0);
            assert!(common::relative_error(pulse, adjoint) < 0.10, "θ0 {theta0}: {pulse} vs {adjoint}");
        }
    }

    #[test]
    fn slow_mode_is_complex() {
        let f = field();
        let lc = find_limit_cycle(&f, &Section::rising(1.37), &relaxed(), &options(0.01)).unwrap();
        let fl = monodromy(&f, &lc).unwrap();
        let slow = fl.multipliers[fl.slow_index];
        assert!((slow.re - 0.382).abs() < 0.01 && (slow.im.abs() - 0.142).abs() < 0.01, "{slow}");
        let z = adjoint_z(&f, &lc).unwrap();
        assert!(matches!(adjoint_i(&f, &lc, &fl, &z), Err(Error::ComplexSlowMode { .. })));
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
