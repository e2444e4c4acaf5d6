//! Ground-truth phase-amplitude reduction of a limit cycle: orbit location,
//! Floquet analysis of the monodromy matrix, and backward adjoint integration
//! for the phase and slowest amplitude response curves.
//!
//! All quantities are sampled on a uniform phase grid anchored at the
//! Poincaré section (`θ = 0` at the crossing).

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ode::{input_direction, jacobian, refine_crossing, Section, Simulation, Scheme, VectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycleOptions {
    pub dt: f64,
    pub grid_points: usize,
    /// State-norm gap between successive section returns that counts as
    /// converged.
    pub tolerance: f64,
    pub max_returns: usize,
    /// Longest time allowed without a section crossing.
    pub max_return_time: f64,
}

impl Default for LimitCycleOptions {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            grid_points: 512,
            tolerance: 1e-8,
            max_returns: 5000,
            max_return_time: 1000.0,
        }
    }
}

/// A converged periodic orbit sampled densely over one period.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    pub period: f64,
    pub omega: f64,
    pub section: Section,
    pub dim: usize,
    pub grid_points: usize,
    /// Integration steps per phase-grid interval.
    pub substeps: usize,
    /// Distance between the start and the end of the recorded period.
    pub closure_gap: f64,
    /// States at half-step spacing: `2 · grid_points · substeps + 1` rows.
    fine: Vec<f64>,
}

impl LimitCycle {
    /// Number of integration steps per period.
    pub fn steps(&self) -> usize {
        self.grid_points * self.substeps
    }

    /// Integration step used along the orbit.
    pub fn step(&self) -> f64 {
        self.period / self.steps() as f64
    }

    pub fn theta_grid(&self) -> Vec<f64> {
        (0..self.grid_points)
            .map(|i| std::f64::consts::TAU * i as f64 / self.grid_points as f64)
            .collect()
    }

    fn fine_state(&self, j: usize) -> &[f64] {
        &self.fine[j * self.dim..(j + 1) * self.dim]
    }

    /// Orbit state at grid point `i` (`θ = 2πi/n`).
    pub fn state(&self, i: usize) -> &[f64] {
        self.fine_state(2 * (i % self.grid_points) * self.substeps)
    }

    /// Output on the phase grid.
    pub fn outputs<F: VectorField + ?Sized>(&self, field: &F) -> Vec<f64> {
        (0..self.grid_points).map(|i| field.output(self.state(i))).collect()
    }

    /// Orbit state at an arbitrary phase, by Fourier interpolation of each
    /// coordinate.
    pub fn state_at(&self, theta: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|d| {
                let col: Vec<f64> = (0..self.grid_points).map(|i| self.state(i)[d]).collect();
                FourierCurve::new(&col).eval(theta)
            })
            .collect()
    }
}

/// Integrates from `x_guess` until two successive section returns agree to
/// `opts.tolerance`, then records one period on the phase grid.
pub fn find_limit_cycle<F: VectorField + ?Sized>(
    field: &F,
    section: &Section,
    x_guess: &[f64],
    opts: &LimitCycleOptions,
) -> Result<LimitCycle> {
    if opts.grid_points < 8 {
        return Err(Error::InvalidArgument("phase grid needs at least 8 points".into()));
    }
    let mut sim = Simulation::new(field, x_guess, 0.0, opts.dt, Scheme::Rk4)?;
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut last_cross = 0.0;
    let mut gap = f64::INFINITY;
    let mut returns = 0usize;
    let (period, x0) = loop {
        let t0 = sim.time();
        let x_before = sim.state().to_vec();
        let y_before = sim.output();
        sim.step(opts.dt, 0.0)?;
        let fresh = prev.is_none() || sim.time() - last_cross > 2.0 * opts.dt;
        if fresh && section.crossing_between(t0, y_before, sim.time(), sim.output()).is_some() {
            let (tc, xc) = refine_crossing(field, section, &x_before, t0, opts.dt);
            // Restarting at the crossing keeps the step grid aligned with the
            // section, so the numerical return map is the same every period.
            sim.reset(&xc, tc);
            if let Some((tp, xp)) = &prev {
                gap = xc.iter().zip(xp).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if gap < opts.tolerance {
                    break (tc - tp, xc);
                }
            }
            prev = Some((tc, xc));
            last_cross = tc;
            returns += 1;
            if returns > opts.max_returns {
                return Err(Error::Convergence {
                    what: "limit cycle",
                    gap,
                });
            }
        }
        if sim.time() - last_cross > opts.max_return_time {
            return Err(Error::Convergence {
                what: "limit cycle (no section crossings)",
                gap,
            });
        }
    };

    let n = opts.grid_points;
    let substeps = ((period / (n as f64 * opts.dt)).ceil() as usize).max(1);
    let m = n * substeps;
    let half = period / (2 * m) as f64;
    let dim = field.dim();
    let mut fine = Vec::with_capacity((2 * m + 1) * dim);
    fine.extend_from_slice(&x0);
    let mut fsim = Simulation::new(field, &x0, 0.0, half, Scheme::Rk4)?;
    for _ in 0..2 * m {
        fsim.step(half, 0.0)?;
        fine.extend_from_slice(fsim.state());
    }
    let closure_gap = fsim
        .state()
        .iter()
        .zip(&x0)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(LimitCycle {
        period,
        omega: std::f64::consts::TAU / period,
        section: *section,
        dim,
        grid_points: n,
        substeps,
        closure_gap,
        fine,
    })
}

/// Jacobians at every half-step orbit point.
fn orbit_jacobians<F: VectorField + ?Sized>(field: &F, lc: &LimitCycle) -> Vec<DMatrix<f64>> {
    (0..=2 * lc.steps())
        .into_par_iter()
        .map(|j| jacobian(field, lc.fine_state(j), 0.0, 0.0))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FloquetData {
    pub monodromy: DMatrix<f64>,
    /// Multipliers sorted by decreasing modulus.
    pub multipliers: Vec<Complex<f64>>,
    /// `ln(λ)/T` for each multiplier.
    pub exponents: Vec<Complex<f64>>,
    pub unit_index: usize,
    /// Index of the slowest decaying non-unit mode.
    pub slow_index: usize,
    /// Slow eigenfunction `g1(θ)` on the phase grid (row-major `n × dim`);
    /// present when the slow multiplier is real.
    pub g1: Option<Vec<f64>>,
}

impl FloquetData {
    pub fn kappa1(&self) -> Complex<f64> {
        self.exponents[self.slow_index]
    }

    /// The slow exponent, or an error when it belongs to a complex pair.
    pub fn kappa1_real(&self) -> Result<f64> {
        let k = self.kappa1();
        if is_real(self.multipliers[self.slow_index]) {
            Ok(k.re)
        } else {
            Err(Error::ComplexSlowMode { re: k.re, im: k.im })
        }
    }

    pub fn unit_multiplier(&self) -> Complex<f64> {
        self.multipliers[self.unit_index]
    }
}

fn is_real(z: Complex<f64>) -> bool {
    z.im.abs() <= 1e-9 * z.norm().max(1e-300)
}

/// Eigenvector of a real matrix for a real eigenvalue, by inverse iteration.
fn real_eigenvector(m: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let shift = lambda + 1e-10 * (1.0 + lambda.abs());
    let shifted = m - DMatrix::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    for _ in 0..8 {
        let w = lu.solve(&v).ok_or_else(|| Error::Convergence {
            what: "eigenvector inverse iteration",
            gap: f64::NAN,
        })?;
        v = &w / w.norm();
    }
    Ok(v)
}

/// Null-space dimension of `M − λI` versus the algebraic multiplicity of `λ`.
fn check_diagonalizable(m: &DMatrix<f64>, eigs: &[Complex<f64>], lambda: f64) -> Result<()> {
    let scale = m.norm().max(1.0);
    let tol = 1e-6 * scale;
    let algebraic = eigs.iter().filter(|e| (**e - Complex::new(lambda, 0.0)).norm() < tol).count();
    if algebraic <= 1 {
        return Ok(());
    }
    let n = m.nrows();
    let sv = (m - DMatrix::identity(n, n) * lambda).singular_values();
    let geometric = sv.iter().filter(|s| **s < tol).count();
    if geometric < algebraic {
        return Err(Error::DefectiveMonodromy {
            multiplier: format!("{lambda}"),
        });
    }
    Ok(())
}

/// Integrates the variational equation over one period and analyses the
/// monodromy matrix.
pub fn monodromy<F: VectorField + ?Sized>(field: &F, lc: &LimitCycle) -> Result<FloquetData> {
    let jac = orbit_jacobians(field, lc);
    let n = lc.dim;
    let h = lc.step();
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut at_grid = Vec::with_capacity(lc.grid_points);
    for j in 0..lc.steps() {
        if j % lc.substeps == 0 {
            at_grid.push(phi.clone());
        }
        let (a0, ah, a1) = (&jac[2 * j], &jac[2 * j + 1], &jac[2 * j + 2]);
        let k1 = a0 * &phi;
        let k2 = ah * (&phi + &k1 * (0.5 * h));
        let k3 = ah * (&phi + &k2 * (0.5 * h));
        let k4 = a1 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    let mono = phi;

    let mut multipliers: Vec<Complex<f64>> = mono.complex_eigenvalues().iter().copied().collect();
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let exponents: Vec<Complex<f64>> = multipliers.iter().map(|m| m.ln() / lc.period).collect();
    let unit_index = multipliers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i)
        .expect("nonempty spectrum");
    let unit = multipliers[unit_index];
    if (unit - 1.0).norm() > 1e-3 {
        return Err(Error::InconsistentData(format!(
            "no unit Floquet multiplier (closest is {unit})"
        )));
    }
    check_diagonalizable(&mono, &multipliers, unit.re)?;
    let slow_index = (0..multipliers.len())
        .filter(|&i| i != unit_index)
        .max_by(|&a, &b| exponents[a].re.total_cmp(&exponents[b].re))
        .ok_or_else(|| Error::InvalidArgument("one-dimensional system has no amplitude mode".into()))?;
    let slow = multipliers[slow_index];

    let g1 = if is_real(slow) {
        check_diagonalizable(&mono, &multipliers, slow.re)?;
        let v = real_eigenvector(&mono, slow.re)?;
        let kappa = exponents[slow_index].re;
        let mut g = Vec::with_capacity(lc.grid_points * n);
        for (i, p) in at_grid.iter().enumerate() {
            let t = lc.period * i as f64 / lc.grid_points as f64;
            let gi = p * &v * (-kappa * t).exp();
            g.extend_from_slice(gi.as_slice());
        }
        Some(g)
    } else {
        None
    };

    Ok(FloquetData {
        monodromy: mono,
        multipliers,
        exponents,
        unit_index,
        slow_index,
        g1,
    })
}

/// Gradient field of an asymptotic coordinate on the phase grid and its
/// projection onto the input direction.
#[derive(Debug, Clone)]
pub struct AdjointCurve {
    pub dim: usize,
    /// Gradients, row-major `n × dim`.
    pub gradients: Vec<f64>,
    /// `gradient · ∂F/∂u` at each grid point.
    pub response: Vec<f64>,
    /// Periods of backward integration used.
    pub periods: usize,
}

impl AdjointCurve {
    pub fn gradient(&self, i: usize) -> &[f64] {
        &self.gradients[i * self.dim..(i + 1) * self.dim]
    }
}

const MAX_ADJOINT_PERIODS: usize = 20_000;
const ADJOINT_TOLERANCE: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward RK4 step of `dλ/dt = −(Aᵀ − shift·I)λ` from `t + h` to `t`.
fn adjoint_step(lam: &DVector<f64>, a0: &DMatrix<f64>, ah: &DMatrix<f64>, a1: &DMatrix<f64>, shift: f64, h: f64) -> DVector<f64> {
    let op = |a: &DMatrix<f64>, v: &DVector<f64>| a.tr_mul(v) - v * shift;
    let k1 = op(a1, lam);
    let k2 = op(ah, &(lam + &k1 * (0.5 * h)));
    let k3 = op(ah, &(lam + &k2 * (0.5 * h)));
    let k4 = op(a0, &(lam + &k3 * h));
    lam + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn input_directions<F: VectorField + ?Sized>(field: &F, lc: &LimitCycle) -> Vec<Vec<f64>> {
    (0..lc.grid_points).map(|i| input_direction(field, lc.state(i), 0.0)).collect()
}

/// Phase response curve from the adjoint equation, normalised so that
/// `∇θ · F = ω` along the orbit.
pub fn adjoint_z<F: VectorField + ?Sized>(field: &F, lc: &LimitCycle) -> Result<AdjointCurve> {
    let jac = orbit_jacobians(field, lc);
    let n = lc.dim;
    let mut f0 = vec![0.0; n];
    field.rhs(lc.state(0), 0.0, 0.0, &mut f0);
    let f0v = DVector::from_column_slice(&f0);
    let mut lam = &f0v * (lc.omega / f0v.norm_squared());
    let h = lc.step();
    let mut grads = vec![0.0; lc.grid_points * n];
    let mut gap = f64::INFINITY;
    for period in 1..=MAX_ADJOINT_PERIODS {
        let start = lam.clone();
        for j in (0..lc.steps()).rev() {
            lam = adjoint_step(&lam, &jac[2 * j], &jac[2 * j + 1], &jac[2 * j + 2], 0.0, h);
            if j % lc.substeps == 0 {
                let i = j / lc.substeps;
                grads[i * n..(i + 1) * n].copy_from_slice(lam.as_slice());
            }
        }
        if !lam.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { time: -(period as f64) * lc.period });
        }
        lam *= lc.omega / lam.dot(&f0v);
        gap = (&lam - &start).norm() / lam.norm();
        if gap < ADJOINT_TOLERANCE {
            let dirs = input_directions(field, lc);
            let response = (0..lc.grid_points)
                .map(|i| dot(&grads[i * n..(i + 1) * n], &dirs[i]))
                .collect();
            return Ok(AdjointCurve {
                dim: n,
                gradients: grads,
                response,
                periods: period,
            });
        }
    }
    Err(Error::Convergence {
        what: "phase adjoint",
        gap,
    })
}

/// Amplitude response curve of the slowest Floquet mode, normalised so that
/// `∇ψ1 · g1 = 1`. Needs the phase adjoint to remove the growing phase
/// component during backward integration.
pub fn adjoint_i<F: VectorField + ?Sized>(
    field: &F,
    lc: &LimitCycle,
    floquet: &FloquetData,
    phase: &AdjointCurve,
) -> Result<AdjointCurve> {
    let kappa = floquet.kappa1_real()?;
    let g1 = floquet
        .g1
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("Floquet data lacks the slow eigenfunction".into()))?;
    let jac = orbit_jacobians(field, lc);
    let n = lc.dim;
    let h = lc.step();
    let flows: Vec<Vec<f64>> = (0..lc.grid_points)
        .map(|i| {
            let mut f = vec![0.0; n];
            field.rhs(lc.state(i), 0.0, 0.0, &mut f);
            f
        })
        .collect();
    let project = |lam: &mut DVector<f64>, i: usize| {
        let c = dot(lam.as_slice(), &flows[i]) / lc.omega;
        for (l, g) in lam.iter_mut().zip(phase.gradient(i)) {
            *l -= c * g;
        }
    };
    let g10 = DVector::from_column_slice(&g1[..n]);
    let mut lam = &g10 / g10.norm_squared();
    project(&mut lam, 0);
    lam /= lam.dot(&g10);
    let mut grads = vec![0.0; lc.grid_points * n];
    let mut gap = f64::INFINITY;
    for period in 1..=MAX_ADJOINT_PERIODS {
        let start = lam.clone();
        for j in (0..lc.steps()).rev() {
            lam = adjoint_step(&lam, &jac[2 * j], &jac[2 * j + 1], &jac[2 * j + 2], kappa, h);
            if j % lc.substeps == 0 {
                let i = j / lc.substeps;
                project(&mut lam, i);
                grads[i * n..(i + 1) * n].copy_from_slice(lam.as_slice());
            }
        }
        if !lam.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { time: -(period as f64) * lc.period });
        }
        let norm = lam.dot(&g10);
        lam /= norm;
        for g in grads.iter_mut() {
            *g /= norm;
        }
        gap = (&lam - &start).norm() / lam.norm();
        if gap < ADJOINT_TOLERANCE {
            let dirs = input_directions(field, lc);
            let response = (0..lc.grid_points)
                .map(|i| dot(&grads[i * n..(i + 1) * n], &dirs[i]))
                .collect();
            return Ok(AdjointCurve {
                dim: n,
                gradients: grads,
                response,
                periods: period,
            });
        }
    }
    Err(Error::Convergence {
        what: "amplitude adjoint",
        gap,
    })
}

/// Max relative deviation of `∇θ · F` from `ω` over the grid.
pub fn phase_normalization_error<F: VectorField + ?Sized>(field: &F, lc: &LimitCycle, z: &AdjointCurve) -> f64 {
    let mut f = vec![0.0; lc.dim];
    (0..lc.grid_points)
        .map(|i| {
            field.rhs(lc.state(i), 0.0, 0.0, &mut f);
            (dot(z.gradient(i), &f) - lc.omega).abs() / lc.omega
        })
        .fold(0.0, f64::max)
}

/// Trigonometric interpolant of uniformly spaced periodic samples.
#[derive(Debug, Clone)]
pub struct FourierCurve {
    mean: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    n: usize,
}

impl FourierCurve {
    pub fn new(samples: &[f64]) -> Self {
        let n = samples.len();
        let kmax = n / 2;
        let mut cos = vec![0.0; kmax + 1];
        let mut sin = vec![0.0; kmax + 1];
        let mean = samples.iter().sum::<f64>() / n as f64;
        for k in 1..=kmax {
            let (mut c, mut s) = (0.0, 0.0);
            for (j, &y) in samples.iter().enumerate() {
                let arg = std::f64::consts::TAU * (k * j % n) as f64 / n as f64;
                c += y * arg.cos();
                s += y * arg.sin();
            }
            let w = if 2 * k == n { 1.0 } else { 2.0 };
            cos[k] = w * c / n as f64;
            sin[k] = if 2 * k == n { 0.0 } else { w * s / n as f64 };
        }
        Self { mean, cos, sin, n }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut v = self.mean;
        for k in 1..self.cos.len() {
            let a = k as f64 * theta;
            v += self.cos[k] * a.cos() + self.sin[k] * a.sin();
        }
        v
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
