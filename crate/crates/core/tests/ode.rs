use std::f64::consts::{PI, TAU};

use hopfid::ode::{find_crossings, integrate, integrate_euler, integrate_sde, Trajectory};
use hopfid::{wrap_pi, HopfCoefficients, HopfField, LinearOutput, PopulationField, PopulationParameters, Section, Slope};
use proptest::prelude::*;

fn endpoint_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.final_state()
        .iter()
        .zip(b.final_state())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rk4_converges_at_fourth_order() {
    let c = HopfCoefficients::new(0.4, 1.3, -0.9, 0.6, 0.0).unwrap();
    let field = HopfField::new(c, LinearOutput::default());
    let run = |dt: f64| integrate(&field, &[0.2, -0.1], (0.0, 10.0), dt, |_| 0.0).unwrap();
    let (h, h2, h4) = (run(0.04), run(0.02), run(0.01));
    let ratio = endpoint_gap(&h, &h2) / endpoint_gap(&h2, &h4);
    assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
}

#[test]
fn reversed_trajectory_flips_crossings() {
    let c = HopfCoefficients::new(0.2, 1.0, -1.0, 0.4, 0.0).unwrap();
    let field = HopfField::new(c, LinearOutput { c0: 0.1, c1: 1.0, c2: 0.3 });
    let fwd = integrate(&field, &[0.3, 0.0], (0.0, 40.0), 0.01, |_| 0.0).unwrap();
    let rev = Trajectory {
        dim: fwd.dim,
        times: fwd.times.iter().rev().map(|t| -t).collect(),
        states: Vec::new(),
        outputs: fwd.outputs.iter().rev().copied().collect(),
        inputs: Vec::new(),
    };
    let up = find_crossings(&fwd, &Section::rising(0.2));
    let down = find_crossings(&rev, &Section::new(0.2, Slope::Falling));
    assert!(up.len() >= 5);
    assert_eq!(up.len(), down.len());
    for (a, b) in up.iter().zip(down.iter().rev()) {
        assert!((a + b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn noiseless_sde_is_euler() {
    let params = PopulationParameters {
        noise_intensity: 0.0,
        n_oscillators: 5,
        ..PopulationParameters::default()
    };
    let field = PopulationField::new(params).unwrap();
    let x0 = field.initial_state();
    let input = |t: f64| 0.01 * (t > 2.0) as u8 as f64;
    let sde = integrate_sde(&field, &x0, (0.0, 20.0), 0.01, input, 42).unwrap();
    let euler = integrate_euler(&field, &x0, (0.0, 20.0), 0.01, input).unwrap();
    assert_eq!(sde.states, euler.states);
}

proptest! {
    #[test]
    fn wrapped_angles_stay_in_range(x in -100.0f64..100.0) {
        let w = wrap_pi(x);
        prop_assert!(w > -PI - 1e-12 && w <= PI);
        let k = ((x - w) / TAU).round();
        prop_assert!((x - w - k * TAU).abs() < 1e-9);
    }

    #[test]
    fn interpolated_crossing_lies_on_the_segment(
        t0 in -10.0f64..10.0, h in 1e-3f64..1.0, y0 in -1.0f64..-1e-6, y1 in 0.0f64..1.0, level in -2.0f64..2.0,
    ) {
        let s = Section::rising(level);
        let tc = s.crossing_between(t0, y0 + level, t0 + h, y1 + level).unwrap();
        prop_assert!(tc >= t0 && tc <= t0 + h);
        let y = y0 + (y1 - y0) * (tc - t0) / h;
        prop_assert!(y.abs() < 1e-9);
        prop_assert!(s.crossing_between(t0, y1 + level + 1e-3, t0 + h, y0 + level).is_none());
        prop_assert!(Section::new(level, Slope::Falling)
            .crossing_between(t0, y1 + level + 1e-3, t0 + h, y0 + level)
            .is_some());
    }
}
