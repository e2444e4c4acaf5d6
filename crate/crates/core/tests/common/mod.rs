#![allow(dead_code)]

use std::f64::consts::PI;

use hopfid::ident::IdentifyConfig;
use hopfid::{HopfCoefficients, HopfField, LinearOutput, Section};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coefficient sets drawn from α ∈ [0.01, 0.5], a ∈ [−2, −0.05], |b| ≤ 2,
/// β ∈ [0.1, 2], kept where the orbit turns forward and the slow mode decays
/// by at most e³ per two periods (so pulses leave enough crossings above the
/// floor to measure the decay).
pub fn hopf_grid(count: usize, seed: u64) -> Vec<HopfCoefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let alpha = rng.random_range(0.01..0.5);
        let a = -rng.random_range(0.05..2.0);
        let b = rng.random_range(-2.0..2.0);
        let beta = rng.random_range(0.1..2.0);
        let omega = beta - alpha * b / a;
        if omega > 0.0 && 4.0 * PI * alpha / omega <= 3.0 {
            let phi = rng.random_range(0.0..2.0 * PI);
            out.push(HopfCoefficients::new(alpha, beta, a, b, phi).unwrap());
        }
    }
    out
}

/// Output `y = r0·sin(θ̂ + φ)` so that the rising zero crossing sits at
/// normal-form phase `−φ`.
pub fn phase_output(c: &HopfCoefficients) -> LinearOutput {
    let (s, co) = c.phi.sin_cos();
    LinearOutput { c0: 0.0, c1: s, c2: co }
}

pub fn self_test_field(c: &HopfCoefficients) -> (HopfField, Section) {
    (HopfField::new(*c, phase_output(c)), Section::rising(0.0))
}

/// Small pulses, short steps and a tight floor for noiseless identification.
pub fn self_test_config(c: &HopfCoefficients) -> IdentifyConfig {
    let period = c.period();
    let duration = 0.01 * period;
    IdentifyConfig {
        dt: (period / 2000.0).min(1e-2),
        transient: 20.0 / c.alpha,
        magnitude: 0.001 * c.r0() / duration,
        duration,
        noise_floor: 1e-8,
        post_crossings: 10,
        ..IdentifyConfig::default()
    }
}

/// Closed-form phase response in normal-form phase.
pub fn z_closed_form(c: &HopfCoefficients, theta_hat: f64) -> f64 {
    let scale = (-c.a / c.alpha).sqrt();
    -scale * (theta_hat.sin() + (c.b / c.a) * theta_hat.cos())
}

pub fn relative_error(value: f64, truth: f64) -> f64 {
    (value - truth).abs() / truth.abs()
}

pub fn leloup_initial_guess() -> Vec<f64> {
    hopfid::LeloupField::initial_state().to_vec()
}
