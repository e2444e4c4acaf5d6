//! Reconstruction of the normal-form state from the scalar output, and the
//! fixed-gain predictor-corrector used in closed loop.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::hopf::{hopf_flow, HopfCoefficients};
use crate::ode::{CrossingDetector, Scheme, Section, Simulation, VectorField};
use crate::reduction::{find_limit_cycle, LimitCycleOptions};

/// Condition number above which direct estimates are flagged.
pub const LOW_CONFIDENCE_CONDITION: f64 = 1e6;

/// Linear map from `(x̂, ŷ)` to the output and its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMapCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// 2-norm condition number of `[[c1, c2], [c3, c4]]`.
    pub condition: f64,
}

impl OutputMapCoefficients {
    /// Completes `(c0, c1, c2)` with the derivative row implied by the linear
    /// part of the normal form.
    pub fn new(c0: f64, c1: f64, c2: f64, coeffs: &HopfCoefficients) -> Result<Self> {
        let (alpha, beta) = (coeffs.alpha, coeffs.beta);
        let c3 = c1 * alpha + c2 * beta;
        let c4 = c2 * alpha - c1 * beta;
        let m = Matrix2::new(c1, c2, c3, c4);
        let det = m.determinant();
        let scale = m.norm_squared().max(f64::MIN_POSITIVE);
        if !(det.abs() > 1e-12 * scale) {
            return Err(Error::DegenerateOutput(format!(
                "output map [[{c1}, {c2}], [{c3}, {c4}]] is singular"
            )));
        }
        let sv = m.singular_values();
        Ok(Self {
            c0,
            c1,
            c2,
            c3,
            c4,
            condition: sv.max() / sv.min(),
        })
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.c1, self.c2, self.c3, self.c4)
    }

    /// `y = c0 + c1 x̂ + c2 ŷ`.
    pub fn output(&self, zeta: [f64; 2]) -> f64 {
        self.c0 + self.c1 * zeta[0] + self.c2 * zeta[1]
    }

    /// Linearized `ẏ = c3 x̂ + c4 ŷ + c1 u`.
    pub fn output_rate(&self, zeta: [f64; 2], u: f64) -> f64 {
        self.c3 * zeta[0] + self.c4 * zeta[1] + self.c1 * u
    }
}

/// Least-squares fit of orbit outputs `y(θ_j)` against
/// `[1, r₀cos(θ−φ), r₀sin(θ−φ)]`.
pub fn fit_output_map(thetas: &[f64], outputs: &[f64], coeffs: &HopfCoefficients) -> Result<OutputMapCoefficients> {
    if thetas.len() != outputs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} phases but {} outputs",
            thetas.len(),
            outputs.len()
        )));
    }
    if thetas.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: thetas.len(),
        });
    }
    let r0 = coeffs.r0();
    let design = DMatrix::from_fn(thetas.len(), 3, |i, j| {
        let (s, c) = (thetas[i] - coeffs.phi).sin_cos();
        match j {
            0 => 1.0,
            1 => r0 * c,
            _ => r0 * s,
        }
    });
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::DegenerateOutput("orbit output does not determine the output map".into()));
    }
    let sol = svd
        .solve(&DVector::from_column_slice(outputs), 0.0)
        .map_err(|e| Error::DegenerateOutput(e.to_string()))?;
    let scale = outputs.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if !(r0 * sol[1].hypot(sol[2]) > 1e-9 * scale) {
        return Err(Error::DegenerateOutput("output does not vary along the orbit".into()));
    }
    OutputMapCoefficients::new(sol[0], sol[1], sol[2], coeffs)
}

/// RMS of `y(θ) − (c0 + c1 r₀cos(θ−φ) + c2 r₀sin(θ−φ))` over the samples.
pub fn output_map_residual(
    thetas: &[f64],
    outputs: &[f64],
    map: &OutputMapCoefficients,
    coeffs: &HopfCoefficients,
) -> f64 {
    let ss: f64 = thetas
        .iter()
        .zip(outputs)
        .map(|(&t, &y)| (y - map.output(coeffs.orbit_point(t - coeffs.phi))).powi(2))
        .sum();
    (ss / thetas.len().max(1) as f64).sqrt()
}

/// Result of inverting the output map at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectEstimate {
    pub zeta: [f64; 2],
    pub low_confidence: bool,
}

/// Solves `[[c1, c2], [c3, c4]] ζ = [y − c0, ẏ − c1 u]`.
pub fn estimate_state_direct(y: f64, y_dot: f64, u: f64, map: &OutputMapCoefficients) -> DirectEstimate {
    let (c1, c2, c3, c4) = (map.c1, map.c2, map.c3, map.c4);
    let det = c1 * c4 - c2 * c3;
    let r1 = y - map.c0;
    let r2 = y_dot - c1 * u;
    DirectEstimate {
        zeta: [(c4 * r1 - c2 * r2) / det, (c1 * r2 - c3 * r1) / det],
        low_confidence: map.condition > LOW_CONFIDENCE_CONDITION,
    }
}

/// Fixed-gain estimator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub zeta: [f64; 2],
    pub nu: f64,
    pub dt: f64,
}

impl EstimatorState {
    pub fn new(zeta: [f64; 2], nu: f64, dt: f64) -> Result<Self> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("correction gain must lie in (0, 1], got {nu}")));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("update interval must be positive, got {dt}")));
        }
        if !zeta.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("initial estimate must be finite".into()));
        }
        Ok(Self { zeta, nu, dt })
    }

    /// State on the orbit at the moment of a section crossing.
    pub fn at_crossing(coeffs: &HopfCoefficients, nu: f64, dt: f64) -> Result<Self> {
        Self::new(coeffs.orbit_point(-coeffs.phi), nu, dt)
    }
}

/// Blends a one-step prediction with a direct estimate:
/// `ζ ← f(ζ, u) + ν (ζ_direct − f(ζ, u))`.
pub fn blend(prediction: [f64; 2], direct: [f64; 2], nu: f64) -> [f64; 2] {
    let keep = 1.0 - nu;
    [
        keep * prediction[0] + nu * direct[0],
        keep * prediction[1] + nu * direct[1],
    ]
}

/// One estimator update using the Hopf flow as predictor. `u` is the input
/// held over the step just finished; `y`, `y_dot` are read at its end.
pub fn update_state(
    est: &EstimatorState,
    coeffs: &HopfCoefficients,
    y: f64,
    y_dot: f64,
    u: f64,
    map: &OutputMapCoefficients,
) -> EstimatorState {
    let prediction = hopf_flow(est.zeta, u, coeffs, est.dt);
    let direct = estimate_state_direct(y, y_dot, u, map).zeta;
    EstimatorState {
        zeta: blend(prediction, direct, est.nu),
        ..*est
    }
}

/// Finite-difference stencil for `ẏ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceScheme {
    #[default]
    Backward2,
    Backward3,
}

/// `ẏ` at the newest sample of a uniformly spaced window (oldest first).
/// Falls back to two points when only two are available.
pub fn finite_difference_ydot(window: &[f64], dt: f64, scheme: DifferenceScheme) -> Result<f64> {
    let n = window.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    Ok(match scheme {
        DifferenceScheme::Backward3 if n >= 3 => {
            (3.0 * window[n - 1] - 4.0 * window[n - 2] + window[n - 3]) / (2.0 * dt)
        }
        _ => (window[n - 1] - window[n - 2]) / dt,
    })
}

/// Mean output over the cycles delimited by consecutive `crossings`, on a
/// uniform phase grid of `samples` points (`θ = 2π (t − c_k)/(c_{k+1} − c_k)`).
/// `times` must be increasing.
pub fn average_cycle(times: &[f64], outputs: &[f64], crossings: &[f64], samples: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if crossings.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
        });
    }
    let thetas: Vec<f64> = (0..samples).map(|j| TAU * j as f64 / samples as f64).collect();
    let mut sum = vec![0.0; samples];
    let mut cycles = 0usize;
    for w in crossings.windows(2) {
        let (start, end) = (w[0], w[1]);
        if start < times[0] || end > times[times.len() - 1] {
            continue;
        }
        for (acc, theta) in sum.iter_mut().zip(&thetas) {
            *acc += interpolate_series(times, outputs, start + theta / TAU * (end - start));
        }
        cycles += 1;
    }
    if cycles == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
        });
    }
    Ok((thetas, sum.into_iter().map(|s| s / cycles as f64).collect()))
}

/// Output along the orbit on a phase grid anchored at `section`: the exact
/// limit cycle for deterministic fields, the average over `cycles` observed
/// cycles for stochastic ones.
pub fn orbit_output_profile<F: VectorField + ?Sized>(
    field: &F,
    section: &Section,
    x0: &[f64],
    dt: f64,
    transient: f64,
    cycles: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    const SAMPLES: usize = 512;
    if field.noise_amplitude().is_none() {
        let opts = LimitCycleOptions {
            dt,
            grid_points: SAMPLES,
            ..LimitCycleOptions::default()
        };
        let lc = find_limit_cycle(field, section, x0, &opts)?;
        return Ok((lc.theta_grid(), lc.outputs(field)));
    }
    let mut sim = Simulation::new(field, x0, 0.0, dt, Scheme::EulerMaruyama { seed })?;
    sim.advance_to(transient, 0.0, |_, _, _| {})?;
    let mut det = CrossingDetector::new(*section, dt);
    let (mut times, mut outputs, mut crossings) = (vec![sim.time()], vec![sim.output()], Vec::new());
    det.push(sim.time(), sim.output());
    let patience = 10.0 * transient.max(100.0);
    let mut since = sim.time();
    while crossings.len() < cycles + 1 {
        sim.step(dt, 0.0)?;
        let (t, y) = (sim.time(), sim.output());
        times.push(t);
        outputs.push(y);
        if let Some(tc) = det.push(t, y) {
            crossings.push(tc);
            since = t;
        } else if t - since > patience {
            return Err(Error::InsufficientData {
                needed: cycles,
                got: crossings.len().saturating_sub(1),
            });
        }
    }
    average_cycle(&times, &outputs, &crossings, SAMPLES)
}

fn interpolate_series(times: &[f64], values: &[f64], t: f64) -> f64 {
    let j = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
    let (t0, t1) = (times[j - 1], times[j]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    values[j - 1] + w * (values[j] - values[j - 1])
}
