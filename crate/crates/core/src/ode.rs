//! Fixed-step integration of vector fields with streaming Poincaré-section
//! detection.
//!
//! Deterministic runs use classical RK4; stochastic runs use Euler–Maruyama
//! with additive noise on the coordinates that carry a nonzero amplitude.
//! The input is held constant over each step (zero-order hold at the step
//! start), which matches how pulses and controller outputs are applied.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (possibly noisy) controlled vector field `dx/dt = F(x, u, t)` with a
/// scalar observable `y = g(x)`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    /// Writes `F(x, u, t)` into `dx`.
    fn rhs(&self, x: &[f64], u: f64, t: f64, dx: &mut [f64]);

    /// The measured output `g(x)`.
    fn output(&self, x: &[f64]) -> f64;

    /// Per-coordinate diffusion amplitude (the `sqrt(2D)` factor), if the
    /// field is stochastic.
    fn noise_amplitude(&self) -> Option<&[f64]> {
        None
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rhs(&self, x: &[f64], u: f64, t: f64, dx: &mut [f64]) {
        (**self).rhs(x, u, t, dx)
    }
    fn output(&self, x: &[f64]) -> f64 {
        (**self).output(x)
    }
    fn noise_amplitude(&self) -> Option<&[f64]> {
        (**self).noise_amplitude()
    }
}

/// Crossing direction of a Poincaré section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Slope {
    Rising,
    Falling,
}

impl Slope {
    pub fn sign(self) -> f64 {
        match self {
            Slope::Rising => 1.0,
            Slope::Falling => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Slope::Rising => Slope::Falling,
            Slope::Falling => Slope::Rising,
        }
    }
}

impl TryFrom<i8> for Slope {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Slope::Rising),
            -1 => Ok(Slope::Falling),
            other => Err(format!("direction must be +1 or -1, got {other}")),
        }
    }
}

impl From<Slope> for i8 {
    fn from(s: Slope) -> i8 {
        match s {
            Slope::Rising => 1,
            Slope::Falling => -1,
        }
    }
}

/// Output threshold crossed with a fixed slope sign; anchors phase zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub threshold: f64,
    pub direction: Slope,
}

impl Section {
    pub fn new(threshold: f64, direction: Slope) -> Self {
        Self {
            threshold,
            direction,
        }
    }

    pub fn rising(threshold: f64) -> Self {
        Self::new(threshold, Slope::Rising)
    }

    /// Linear-interpolated crossing time between two consecutive samples, if
    /// the segment crosses the threshold with the required slope.
    pub fn crossing_between(&self, t0: f64, y0: f64, t1: f64, y1: f64) -> Option<f64> {
        let s = self.direction.sign();
        let a = s * (y0 - self.threshold);
        let b = s * (y1 - self.threshold);
        if a < 0.0 && b >= 0.0 {
            let w = a / (a - b);
            Some(t0 + w * (t1 - t0))
        } else {
            None
        }
    }
}

/// Samples of one simulation run. `states` is row-major (`len × dim`) and may
/// be empty when states were not recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub outputs: Vec<f64>,
    /// Input applied on `[times[i], times[i+1])`; the last entry repeats the
    /// input at the final time.
    pub inputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }
}

/// Integration scheme for a [`Simulation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    Euler,
    EulerMaruyama { seed: u64 },
}

struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// One classical RK4 step of size `h` under constant input `u`.
fn rk4_step<F: VectorField + ?Sized>(f: &F, ws: &mut Workspace, x: &mut [f64], t: f64, h: f64, u: f64) {
    let n = x.len();
    f.rhs(x, u, t, &mut ws.k1);
    for i in 0..n {
        ws.tmp[i] = x[i] + 0.5 * h * ws.k1[i];
    }
    f.rhs(&ws.tmp, u, t + 0.5 * h, &mut ws.k2);
    for i in 0..n {
        ws.tmp[i] = x[i] + 0.5 * h * ws.k2[i];
    }
    f.rhs(&ws.tmp, u, t + 0.5 * h, &mut ws.k3);
    for i in 0..n {
        ws.tmp[i] = x[i] + h * ws.k3[i];
    }
    f.rhs(&ws.tmp, u, t + h, &mut ws.k4);
    for i in 0..n {
        x[i] += h / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Single RK4 step of a field from `x` (allocating); used for sub-step
/// refinement of section crossings.
pub fn rk4_once<F: VectorField + ?Sized>(f: &F, x: &[f64], t: f64, h: f64, u: f64) -> Vec<f64> {
    let mut ws = Workspace::new(x.len());
    let mut y = x.to_vec();
    rk4_step(f, &mut ws, &mut y, t, h, u);
    y
}

/// Streaming integrator: holds the current state and advances it step by
/// step so long experiments need not keep full trajectories.
pub struct Simulation<'f, F: VectorField + ?Sized> {
    field: &'f F,
    scheme: Scheme,
    rng: Option<ChaCha8Rng>,
    x: Vec<f64>,
    t: f64,
    dt: f64,
    ws: Workspace,
}

impl<'f, F: VectorField + ?Sized> Simulation<'f, F> {
    pub fn new(field: &'f F, x0: &[f64], t0: f64, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")));
        }
        if x0.len() != field.dim() {
            return Err(Error::InvalidArgument(format!(
                "initial state has dimension {}, field expects {}",
                x0.len(),
                field.dim()
            )));
        }
        let rng = match scheme {
            Scheme::EulerMaruyama { seed } => {
                let amp = field.noise_amplitude().ok_or_else(|| {
                    Error::InvalidArgument("Euler-Maruyama needs a field with noise amplitudes".into())
                })?;
                if amp.len() != field.dim() || amp.iter().any(|&s| !(s >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "noise amplitudes must be one nonnegative entry per coordinate".into(),
                    ));
                }
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
            _ => None,
        };
        Ok(Self {
            field,
            scheme,
            rng,
            x: x0.to_vec(),
            t: t0,
            dt,
            ws: Workspace::new(field.dim()),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn output(&self) -> f64 {
        self.field.output(&self.x)
    }

    pub fn field(&self) -> &'f F {
        self.field
    }

    /// Replaces the state (keeps time, scheme and RNG stream).
    pub fn set_state(&mut self, x: &[f64]) {
        self.x.copy_from_slice(x);
    }

    /// Rewinds or jumps to `(x, t)`; the RNG stream continues.
    pub fn reset(&mut self, x: &[f64], t: f64) {
        self.x.copy_from_slice(x);
        self.t = t;
    }

    /// Advances by `h` under constant input `u`.
    pub fn step(&mut self, h: f64, u: f64) -> Result<()> {
        match self.scheme {
            Scheme::Rk4 => rk4_step(self.field, &mut self.ws, &mut self.x, self.t, h, u),
            Scheme::Euler => self.euler_step(h, u),
            Scheme::EulerMaruyama { .. } => self.euler_step(h, u),
        }
        self.t += h;
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: self.t });
        }
        Ok(())
    }

    fn euler_step(&mut self, h: f64, u: f64) {
        self.field.rhs(&self.x, u, self.t, &mut self.ws.k1);
        for (xi, ki) in self.x.iter_mut().zip(&self.ws.k1) {
            *xi += h * ki;
        }
        if let (Some(rng), Some(amp)) = (self.rng.as_mut(), self.field.noise_amplitude()) {
            let sq = h.sqrt();
            for (xi, &s) in self.x.iter_mut().zip(amp) {
                if s > 0.0 {
                    let xi_n: f64 = StandardNormal.sample(rng);
                    *xi += s * sq * xi_n;
                }
            }
        }
    }

    /// Advances to `t_target` with regular steps and one shorter final step,
    /// calling `observe(t, y, x)` after every step.
    pub fn advance_to<O>(&mut self, t_target: f64, u: f64, mut observe: O) -> Result<()>
    where
        O: FnMut(f64, f64, &[f64]),
    {
        let eps = 1e-9 * self.dt;
        while t_target - self.t > eps {
            let h = self.dt.min(t_target - self.t);
            self.step(h, u)?;
            if t_target - self.t <= eps {
                self.t = t_target;
            }
            observe(self.t, self.field.output(&self.x), &self.x);
        }
        Ok(())
    }
}

/// Stateful section-crossing detector for sample streams.
///
/// Crossings closer than `window` to the previously accepted crossing are
/// merged into it.
#[derive(Debug, Clone)]
pub struct CrossingDetector {
    section: Section,
    window: f64,
    prev: Option<(f64, f64)>,
    last: Option<f64>,
}

impl CrossingDetector {
    pub fn new(section: Section, window: f64) -> Self {
        Self {
            section,
            window,
            prev: None,
            last: None,
        }
    }

    pub fn section(&self) -> Section {
        self.section
    }

    /// Feeds one sample; returns the crossing time if this segment produced
    /// an accepted crossing.
    pub fn push(&mut self, t: f64, y: f64) -> Option<f64> {
        let hit = self
            .prev
            .and_then(|(t0, y0)| self.section.crossing_between(t0, y0, t, y));
        self.prev = Some((t, y));
        let tc = hit?;
        if let Some(last) = self.last {
            if tc - last <= self.window {
                return None;
            }
        }
        self.last = Some(tc);
        Some(tc)
    }

    /// Forgets the previous sample (e.g. after a discontinuous reset).
    pub fn reset(&mut self) {
        self.prev = None;
        self.last = None;
    }
}

/// Finds the crossing time inside one RK4 step from `(t, x)` by regula falsi
/// on the sub-step length.
pub fn refine_crossing<F: VectorField + ?Sized>(
    field: &F,
    section: &Section,
    x: &[f64],
    t: f64,
    dt: f64,
) -> (f64, Vec<f64>) {
    let s = section.direction.sign();
    let g = |h: f64| -> (f64, Vec<f64>) {
        let xh = if h == 0.0 { x.to_vec() } else { rk4_once(field, x, t, h, 0.0) };
        (s * (field.output(&xh) - section.threshold), xh)
    };
    let (mut lo, mut hi) = (0.0, dt);
    let (mut glo, _) = g(lo);
    let (mut ghi, mut xhi) = g(hi);
    let mut side = 0i8;
    for _ in 0..100 {
        if ghi == 0.0 || hi - lo <= 1e-15 * dt.max(1.0) {
            break;
        }
        let h = (lo * ghi - hi * glo) / (ghi - glo);
        let (gm, xm) = g(h);
        if gm.abs() < 1e-15 {
            return (t + h, xm);
        }
        if gm < 0.0 {
            lo = h;
            glo = gm;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = h;
            ghi = gm;
            xhi = xm;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    (t + hi, xhi)
}

/// All crossings of `section` in a recorded trajectory, debounced by the
/// largest sample spacing.
pub fn find_crossings(traj: &Trajectory, section: &Section) -> Vec<f64> {
    let window = traj
        .times
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let mut det = CrossingDetector::new(*section, window);
    traj.times
        .iter()
        .zip(&traj.outputs)
        .filter_map(|(&t, &y)| det.push(t, y))
        .collect()
}

fn run_recorded<F, I>(
    field: &F,
    x0: &[f64],
    t_span: (f64, f64),
    dt: f64,
    input_fn: I,
    scheme: Scheme,
) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    I: Fn(f64) -> f64,
{
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("empty time span [{t0}, {t1}]")));
    }
    let mut sim = Simulation::new(field, x0, t0, dt, scheme)?;
    let n_est = ((t1 - t0) / dt).ceil() as usize + 2;
    let dim = field.dim();
    let mut traj = Trajectory {
        dim,
        times: Vec::with_capacity(n_est),
        states: Vec::with_capacity(n_est * dim),
        outputs: Vec::with_capacity(n_est),
        inputs: Vec::with_capacity(n_est),
    };
    traj.times.push(t0);
    traj.states.extend_from_slice(x0);
    traj.outputs.push(field.output(x0));
    let eps = 1e-9 * dt;
    while t1 - sim.time() > eps {
        let u = input_fn(sim.time());
        traj.inputs.push(u);
        let h = dt.min(t1 - sim.time());
        sim.step(h, u)?;
        if t1 - sim.time() <= eps {
            sim.t = t1;
        }
        traj.times.push(sim.time());
        traj.states.extend_from_slice(sim.state());
        traj.outputs.push(sim.output());
    }
    traj.inputs.push(input_fn(sim.time()));
    Ok(traj)
}

/// Classical fixed-step RK4 over `t_span`, recording every step.
pub fn integrate<F, I>(field: &F, x0: &[f64], t_span: (f64, f64), dt: f64, input_fn: I) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    I: Fn(f64) -> f64,
{
    run_recorded(field, x0, t_span, dt, input_fn, Scheme::Rk4)
}

/// Explicit Euler; the deterministic limit of [`integrate_sde`].
pub fn integrate_euler<F, I>(field: &F, x0: &[f64], t_span: (f64, f64), dt: f64, input_fn: I) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    I: Fn(f64) -> f64,
{
    run_recorded(field, x0, t_span, dt, input_fn, Scheme::Euler)
}

/// Euler–Maruyama with additive noise; bit-reproducible for a given seed.
pub fn integrate_sde<F, I>(
    field: &F,
    x0: &[f64],
    t_span: (f64, f64),
    dt: f64,
    input_fn: I,
    seed: u64,
) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    I: Fn(f64) -> f64,
{
    run_recorded(field, x0, t_span, dt, input_fn, Scheme::EulerMaruyama { seed })
}

/// Central finite-difference Jacobian `dF/dx` with step `1e-6 (1 + |x_j|)`.
pub fn jacobian<F: VectorField + ?Sized>(f: &F, x: &[f64], u: f64, t: f64) -> nalgebra::DMatrix<f64> {
    let n = x.len();
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        f.rhs(&xp, u, t, &mut fp);
        xp[j] = x[j] - h;
        f.rhs(&xp, u, t, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central finite-difference input direction `dF/du`.
pub fn input_direction<F: VectorField + ?Sized>(f: &F, x: &[f64], t: f64) -> Vec<f64> {
    let n = x.len();
    let h = 1e-6;
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    f.rhs(x, h, t, &mut fp);
    f.rhs(x, -h, t, &mut fm);
    fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl VectorField for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64], _u: f64, _t: f64, dx: &mut [f64]) {
            dx[0] = -x[0];
        }
        fn output(&self, x: &[f64]) -> f64 {
            x[0]
        }
    }

    struct Blowup;
    impl VectorField for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64], _u: f64, _t: f64, dx: &mut [f64]) {
            dx[0] = x[0] * x[0];
        }
        fn output(&self, x: &[f64]) -> f64 {
            x[0]
        }
    }

    struct Ou {
        amp: [f64; 1],
    }
    impl VectorField for Ou {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64], _u: f64, _t: f64, dx: &mut [f64]) {
            dx[0] = -x[0];
        }
        fn output(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn noise_amplitude(&self) -> Option<&[f64]> {
            Some(&self.amp)
        }
    }

    fn samples(times: &[f64], outputs: &[f64]) -> Trajectory {
        Trajectory {
            dim: 1,
            times: times.to_vec(),
            states: outputs.to_vec(),
            outputs: outputs.to_vec(),
            inputs: vec![0.0; times.len()],
        }
    }

    #[test]
    fn exponential_decay_endpoint() {
        let traj = integrate(&Decay, &[1.0], (0.0, 1.0), 1e-3, |_| 0.0).unwrap();
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert!((traj.final_time() - 1.0).abs() < 1e-12);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn divergence_reports_time() {
        // x' = x^2 from 1 blows up at t = 1.
        let err = integrate(&Blowup, &[1.0], (0.0, 5.0), 1e-2, |_| 0.0).unwrap_err();
        match err {
            Error::Divergence { time } => assert!(time > 0.9 && time < 1.2, "time {time}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(integrate(&Decay, &[1.0], (0.0, 1.0), 0.0, |_| 0.0).is_err());
        assert!(integrate(&Decay, &[1.0], (1.0, 1.0), 0.1, |_| 0.0).is_err());
    }

    #[test]
    fn crossing_interpolation_and_direction() {
        let traj = samples(&[1.0, 2.0], &[-0.1, 0.1]);
        assert_eq!(find_crossings(&traj, &Section::rising(0.0)), vec![1.5]);
        assert!(find_crossings(&traj, &Section::new(0.0, Slope::Falling)).is_empty());
    }

    #[test]
    fn sine_crossings() {
        let dt = 1e-3;
        let n = (20.0 / dt) as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let ys: Vec<f64> = times.iter().map(|t| t.sin()).collect();
        let c = find_crossings(&samples(&times, &ys), &Section::rising(0.0));
        // t = 0 sits exactly on the threshold with no previous sample, so the
        // first detected rising crossing is 2*pi.
        assert_eq!(c.len(), 3);
        for (k, tc) in c.iter().enumerate() {
            let expect = 2.0 * std::f64::consts::PI * (k + 1) as f64;
            assert!((tc - expect).abs() < 1e-4, "{tc} vs {expect}");
        }
    }

    #[test]
    fn debounce_merges_close_crossings() {
        let traj = samples(&[0.0, 1.0, 2.0, 3.0], &[-1.0, 1.0, -1.0, 1.0]);
        // Rising at 0.5 and 2.5: further apart than the spacing, both kept.
        assert_eq!(find_crossings(&traj, &Section::rising(0.0)).len(), 2);
        let mut det = CrossingDetector::new(Section::rising(0.0), 3.0);
        let hits: Vec<f64> = traj
            .times
            .iter()
            .zip(&traj.outputs)
            .filter_map(|(&t, &y)| det.push(t, y))
            .collect();
        assert_eq!(hits, vec![0.5]);
    }

    #[test]
    fn sde_zero_noise_equals_euler() {
        let f = Ou { amp: [0.0] };
        let a = integrate_sde(&f, &[0.3], (0.0, 5.0), 0.01, |_| 0.0, 7).unwrap();
        let b = integrate_euler(&f, &[0.3], (0.0, 5.0), 0.01, |_| 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sde_same_seed_is_identical() {
        let f = Ou { amp: [(2.0f64 * 1e-4).sqrt()] };
        let a = integrate_sde(&f, &[0.0], (0.0, 50.0), 0.01, |_| 0.0, 11).unwrap();
        let b = integrate_sde(&f, &[0.0], (0.0, 50.0), 0.01, |_| 0.0, 11).unwrap();
        let c = integrate_sde(&f, &[0.0], (0.0, 50.0), 0.01, |_| 0.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ornstein_uhlenbeck_stationary_variance() {
        // dx = -x dt + sqrt(2D) dW has stationary variance D.
        let d: f64 = 1e-4;
        let f = Ou { amp: [(2.0 * d).sqrt()] };
        let traj = integrate_sde(&f, &[0.0], (0.0, 20_000.0), 0.01, |_| 0.0, 3).unwrap();
        let xs: Vec<f64> = traj.outputs.iter().skip(1000).step_by(10).copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var / d - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn sde_requires_noise_amplitude() {
        assert!(integrate_sde(&Decay, &[1.0], (0.0, 1.0), 0.01, |_| 0.0, 1).is_err());
    }

    #[test]
    fn slope_from_integer() {
        assert_eq!(Slope::try_from(1).unwrap(), Slope::Rising);
        assert_eq!(Slope::try_from(-1).unwrap(), Slope::Falling);
        assert!(Slope::try_from(0).is_err());
    }
}
