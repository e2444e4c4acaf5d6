//! Backward dynamic programming over a grid of normal-form states, and the
//! closed loop that couples a plant, the state estimator and the resulting
//! policy.

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{
    finite_difference_ydot, update_state, DifferenceScheme, EstimatorState, OutputMapCoefficients,
};
use crate::models::hopf::{hopf_flow, HopfCoefficients};
use crate::ode::{refine_crossing, CrossingDetector, Scheme, Section, Simulation, VectorField};

/// One controller interval of the normal form under constant `u`.
pub fn hopf_step(zeta: [f64; 2], u: f64, coeffs: &HopfCoefficients, dt: f64) -> [f64; 2] {
    hopf_flow(zeta, u, coeffs, dt)
}

/// Uniform square grid of `points × points` nodes over `[−L, L]²`,
/// with `L = half_width_r0 · r₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateGridSpec {
    pub points: usize,
    pub half_width_r0: f64,
}

impl Default for StateGridSpec {
    fn default() -> Self {
        Self {
            points: 161,
            half_width_r0: 2.0,
        }
    }
}

/// Resolved grid in absolute units. Node `(ix, iy)` is stored at
/// `iy · points + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    pub points: usize,
    pub half_width: f64,
}

/// Bilinear stencil of a point on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub base: usize,
    pub wx: f64,
    pub wy: f64,
    /// The point lay outside the grid and was moved onto its boundary.
    pub clamped: bool,
}

impl StateGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn cells(&self) -> usize {
        self.points * self.points
    }

    pub fn coordinate(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn node(&self, index: usize) -> [f64; 2] {
        [self.coordinate(index % self.points), self.coordinate(index / self.points)]
    }

    fn axis(&self, v: f64) -> (usize, f64, bool) {
        let clamped = !(v >= -self.half_width && v <= self.half_width);
        let v = if v.is_nan() { 0.0 } else { v.clamp(-self.half_width, self.half_width) };
        let s = (v + self.half_width) / self.spacing();
        let j = (s.floor() as usize).min(self.points - 2);
        (j, s - j as f64, clamped)
    }

    pub fn stencil(&self, zeta: [f64; 2]) -> Stencil {
        let (ix, wx, cx) = self.axis(zeta[0]);
        let (iy, wy, cy) = self.axis(zeta[1]);
        Stencil {
            base: iy * self.points + ix,
            wx,
            wy,
            clamped: cx || cy,
        }
    }

    pub fn interpolate(&self, values: &[f64], s: &Stencil) -> f64 {
        let n = self.points;
        let (wx, wy) = (s.wx, s.wy);
        (1.0 - wx) * (1.0 - wy) * values[s.base]
            + wx * (1.0 - wy) * values[s.base + 1]
            + (1.0 - wx) * wy * values[s.base + n]
            + wx * wy * values[s.base + n + 1]
    }
}

/// State term `c₂(ζ, i)` of the stage cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateCost {
    Zero,
    /// `k (1 − exp(−30 ‖ζ − r₀[cos(θ₀ + ωiΔt), sin(θ₀ + ωiΔt)]‖²))`.
    PhaseShift { k: f64, theta0: f64 },
    /// `k (1 − exp(−20 ‖ζ‖²))`.
    Phaseless { k: f64 },
}

impl StateCost {
    /// Moving target of the phase-shift cost at `t = iΔt`.
    pub fn target(coeffs: &HopfCoefficients, theta0: f64, t: f64) -> [f64; 2] {
        let r0 = coeffs.r0();
        let (s, c) = (theta0 + coeffs.omega() * t).sin_cos();
        [r0 * c, r0 * s]
    }

    pub fn eval(&self, zeta: [f64; 2], i: usize, coeffs: &HopfCoefficients, dt: f64) -> f64 {
        match *self {
            StateCost::Zero => 0.0,
            StateCost::PhaseShift { k, theta0 } => {
                let target = Self::target(coeffs, theta0, i as f64 * dt);
                let d2 = (zeta[0] - target[0]).powi(2) + (zeta[1] - target[1]).powi(2);
                k * (1.0 - (-30.0 * d2).exp())
            }
            StateCost::Phaseless { k } => k * (1.0 - (-20.0 * (zeta[0] * zeta[0] + zeta[1] * zeta[1])).exp()),
        }
    }

    /// Supremum over states and times.
    pub fn sup(&self) -> f64 {
        match *self {
            StateCost::Zero => 0.0,
            StateCost::PhaseShift { k, .. } | StateCost::Phaseless { k } => k.abs(),
        }
    }
}

/// Input term `c₁(u, i)` of the stage cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputCost {
    #[default]
    Quadratic,
    Zero,
}

impl InputCost {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            InputCost::Quadratic => u * u,
            InputCost::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    FiniteHorizon,
    /// The policy always looks up `J*₁`.
    RecedingHorizon,
}

/// `levels` equally spaced inputs covering `[lo, hi]`.
pub fn input_levels(lo: f64, hi: f64, levels: usize) -> Vec<f64> {
    if levels <= 1 || lo == hi {
        return vec![lo];
    }
    (0..levels)
        .map(|j| lo + (hi - lo) * j as f64 / (levels - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub coeffs: HopfCoefficients,
    pub dt: f64,
    pub horizon: usize,
    pub inputs: Vec<f64>,
    pub grid: StateGridSpec,
    pub state_cost: StateCost,
    pub input_cost: InputCost,
    pub mode: Mode,
    /// Added when a successor leaves the grid; `None` means `10 · sup c₂`.
    pub out_of_grid_penalty: Option<f64>,
}

impl ControlProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.coeffs.validate()?;
        if !(self.dt > 0.0) {
            return bad(format!("controller step must be positive, got {}", self.dt));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if self.inputs.is_empty() {
            return bad("input set is empty".into());
        }
        if self.inputs.len() > u16::MAX as usize {
            return bad(format!("at most {} input levels are supported", u16::MAX));
        }
        if let Some(u) = self.inputs.iter().find(|u| !u.is_finite()) {
            return bad(format!("input level {u} is not finite"));
        }
        if !(self.grid.half_width_r0 >= 1.5) {
            return bad(format!(
                "grid half-width {} r0 leaves less than 1.5 r0 around the orbit",
                self.grid.half_width_r0
            ));
        }
        if self.grid.points < 2 {
            return bad("state grid needs at least 2 points per axis".into());
        }
        if let Some(p) = self.out_of_grid_penalty {
            if !(p >= 0.0 && p.is_finite()) {
                return bad(format!("out-of-grid penalty must be finite and nonnegative, got {p}"));
            }
        }
        Ok(())
    }

    pub fn state_grid(&self) -> StateGrid {
        StateGrid {
            points: self.grid.points,
            half_width: self.grid.half_width_r0 * self.coeffs.r0(),
        }
    }

    pub fn penalty(&self) -> f64 {
        self.out_of_grid_penalty.unwrap_or(10.0 * self.state_cost.sup())
    }

    pub fn input_bounds(&self) -> (f64, f64) {
        self.inputs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| (lo.min(u), hi.max(u)))
    }

    /// Input indices ordered by `|u|`, then `u`; the first minimizer in this
    /// order wins ties.
    pub fn tie_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        order.sort_by(|&p, &q| {
            let (a, b) = (self.inputs[p], self.inputs[q]);
            a.abs().total_cmp(&b.abs()).then(a.total_cmp(&b))
        });
        order
    }

    /// Stable digest of everything that determines the solved table.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let c = &self.coeffs;
        for v in [c.alpha, c.beta, c.a, c.b, c.phi, self.dt, self.grid.half_width_r0, self.penalty()] {
            h.update(v.to_le_bytes());
        }
        h.update((self.horizon as u64).to_le_bytes());
        h.update((self.grid.points as u64).to_le_bytes());
        h.update((self.inputs.len() as u64).to_le_bytes());
        for u in &self.inputs {
            h.update(u.to_le_bytes());
        }
        match self.state_cost {
            StateCost::Zero => h.update([0u8]),
            StateCost::PhaseShift { k, theta0 } => {
                h.update([1u8]);
                h.update(k.to_le_bytes());
                h.update(theta0.to_le_bytes());
            }
            StateCost::Phaseless { k } => {
                h.update([2u8]);
                h.update(k.to_le_bytes());
            }
        }
        h.update([self.input_cost as u8, self.mode as u8]);
        h.finalize().into()
    }
}

/// Optimal cost-to-go `J*_i` for `i = 0..=η` and the minimizing input index
/// for `i = 0..η`, each slice row-major over the state grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGoTable {
    pub grid: StateGrid,
    pub horizon: usize,
    pub inputs: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub argmin: Vec<Vec<u16>>,
    pub fingerprint: [u8; 32],
}

impl CostToGoTable {
    pub fn value(&self, i: usize, cell: usize) -> f64 {
        self.values[i][cell]
    }

    pub fn policy(&self, i: usize, cell: usize) -> f64 {
        self.inputs[self.argmin[i][cell] as usize]
    }
}

fn state_cost_slice(p: &ControlProblem, grid: &StateGrid, i: usize) -> Vec<f64> {
    (0..grid.cells())
        .map(|c| p.state_cost.eval(grid.node(c), i, &p.coeffs, p.dt))
        .collect()
}

/// Runs the backward recursion
/// `J*_i(ζ) = min_u [c₁(u) + c₂(ζ, i) + J*_{i+1}(f(ζ, u))]` from
/// `J*_η = c₂(·, η)`.
pub fn solve_cost_to_go(p: &ControlProblem) -> Result<CostToGoTable> {
    p.validate()?;
    let grid = p.state_grid();
    let cells = grid.cells();
    let m = p.inputs.len();
    let order = p.tie_order();
    let penalty = p.penalty();

    // The flow is time-invariant, so successor stencils are computed once.
    let stencils: Vec<Stencil> = (0..cells)
        .into_par_iter()
        .flat_map_iter(|c| {
            let z = grid.node(c);
            p.inputs
                .iter()
                .map(move |&u| grid.stencil(hopf_step(z, u, &p.coeffs, p.dt)))
        })
        .collect();
    let input_costs: Vec<f64> = p.inputs.iter().map(|&u| p.input_cost.eval(u)).collect();

    let mut values = vec![Vec::new(); p.horizon + 1];
    let mut argmin = vec![Vec::new(); p.horizon];
    values[p.horizon] = state_cost_slice(p, &grid, p.horizon);
    check_finite(&values[p.horizon])?;
    for i in (0..p.horizon).rev() {
        let c2 = state_cost_slice(p, &grid, i);
        let next = &values[i + 1];
        let (v, a): (Vec<f64>, Vec<u16>) = (0..cells)
            .into_par_iter()
            .map(|c| {
                let row = &stencils[c * m..(c + 1) * m];
                let mut best = (f64::INFINITY, order[0]);
                for &q in &order {
                    let s = &row[q];
                    let mut total = input_costs[q] + c2[c] + grid.interpolate(next, s);
                    if s.clamped {
                        total += penalty;
                    }
                    if total < best.0 {
                        best = (total, q);
                    }
                }
                (best.0, best.1 as u16)
            })
            .unzip();
        check_finite(&v)?;
        values[i] = v;
        argmin[i] = a;
    }
    Ok(CostToGoTable {
        grid,
        horizon: p.horizon,
        inputs: p.inputs.clone(),
        values,
        argmin,
        fingerprint: p.fingerprint(),
    })
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFiniteCost { index }),
        None => Ok(()),
    }
}

/// Bellman minimization at an arbitrary state: returns `(u, value)`.
/// Beyond the horizon of a finite-horizon table the input is zero.
pub fn optimal_input(zeta: [f64; 2], i: usize, table: &CostToGoTable, p: &ControlProblem) -> (f64, f64) {
    let i = match p.mode {
        Mode::RecedingHorizon => 0,
        Mode::FiniteHorizon if i >= table.horizon => return (0.0, 0.0),
        Mode::FiniteHorizon => i,
    };
    let next = &table.values[(i + 1).min(table.horizon)];
    let c2 = p.state_cost.eval(zeta, i, &p.coeffs, p.dt);
    let penalty = p.penalty();
    let mut best = (0.0, f64::INFINITY);
    for q in p.tie_order() {
        let u = p.inputs[q];
        let s = table.grid.stencil(hopf_step(zeta, u, &p.coeffs, p.dt));
        let mut total = p.input_cost.eval(u) + c2 + table.grid.interpolate(next, &s);
        if s.clamped {
            total += penalty;
        }
        if total < best.1 {
            best = (u, total);
        }
    }
    best
}

const CACHE_MAGIC: &[u8; 8] = b"HOPFCTG1";

/// Writes the table as: magic, fingerprint, grid points (u32), half-width
/// (f64), horizon (u32), input count (u32), inputs (f64), then `η + 1`
/// value slices (f64) and `η` argmin slices (u16), little-endian.
pub fn save_table(table: &CostToGoTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&table.fingerprint)?;
    w.write_all(&(table.grid.points as u32).to_le_bytes())?;
    w.write_all(&table.grid.half_width.to_le_bytes())?;
    w.write_all(&(table.horizon as u32).to_le_bytes())?;
    w.write_all(&(table.inputs.len() as u32).to_le_bytes())?;
    for u in &table.inputs {
        w.write_all(&u.to_le_bytes())?;
    }
    for slice in &table.values {
        for v in slice {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for slice in &table.argmin {
        for a in slice {
            w.write_all(&a.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Cache(format!("truncated cache file: {e}")))?;
    Ok(buf)
}

/// Reads a table written by [`save_table`]. Returns `Ok(None)` when the file
/// belongs to a different problem.
pub fn load_table(path: &Path, p: &ControlProblem) -> Result<Option<CostToGoTable>> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<8>(&mut r)? != CACHE_MAGIC {
        return Err(Error::Cache(format!("{} is not a cost-to-go cache", path.display())));
    }
    let fingerprint = read_array::<32>(&mut r)?;
    if fingerprint != p.fingerprint() {
        return Ok(None);
    }
    let points = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let half_width = f64::from_le_bytes(read_array(&mut r)?);
    let horizon = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let m = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let inputs = (0..m)
        .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
        .collect::<Result<Vec<_>>>()?;
    let cells = points * points;
    let values = (0..=horizon)
        .map(|_| {
            (0..cells)
                .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let argmin = (0..horizon)
        .map(|_| {
            (0..cells)
                .map(|_| Ok(u16::from_le_bytes(read_array(&mut r)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(CostToGoTable {
        grid: StateGrid { points, half_width },
        horizon,
        inputs,
        values,
        argmin,
        fingerprint,
    }))
}

/// Loads the table from `path` if it matches `p`, otherwise solves and
/// writes it. The flag reports a cache hit.
pub fn solve_or_load(p: &ControlProblem, path: &Path) -> Result<(CostToGoTable, bool)> {
    if path.exists() {
        match load_table(path, p) {
            Ok(Some(t)) => return Ok((t, true)),
            Ok(None) => log::info!("cache {} is for a different problem; re-solving", path.display()),
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let table = solve_cost_to_go(p)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_table(&table, path)?;
    Ok((table, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    /// Estimator correction gain.
    pub nu: f64,
    /// Plant integration step.
    pub plant_dt: f64,
    /// Unforced time before the anchoring crossing is sought.
    pub transient: f64,
    /// Length of the run after the anchor.
    pub duration: f64,
    /// Time after the anchor at which the controller is switched on.
    pub control_start: f64,
    pub ydot: DifferenceScheme,
    /// Expected phase advance in time units, used to pair controlled and
    /// reference crossings.
    pub target_shift: f64,
    pub seed: u64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            nu: 0.02,
            plant_dt: 1e-2,
            transient: 500.0,
            duration: 240.0,
            control_start: 0.0,
            ydot: DifferenceScheme::Backward2,
            target_shift: 0.0,
            seed: 0,
        }
    }
}

/// Sampled closed-loop run, one row per controller step. Times are measured
/// from the anchoring crossing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRecord {
    pub times: Vec<f64>,
    pub outputs: Vec<f64>,
    pub inputs: Vec<f64>,
    pub estimates: Vec<[f64; 2]>,
    pub crossings: Vec<f64>,
    pub reference_crossings: Vec<f64>,
    pub reference_outputs: Vec<f64>,
    /// Advance of the last controlled crossing relative to the matching
    /// reference crossing (positive = earlier).
    pub realized_shift: Option<f64>,
}

fn plant_scheme<F: VectorField + ?Sized>(f: &F, seed: u64) -> Scheme {
    if f.noise_amplitude().is_some() {
        Scheme::EulerMaruyama { seed }
    } else {
        Scheme::Rk4
    }
}

/// Relaxes the plant and stops it exactly on a section crossing (up to one
/// step for stochastic plants). Returns the state there.
pub fn anchor_state<F: VectorField + ?Sized>(
    plant: &F,
    section: &Section,
    x0: &[f64],
    dt: f64,
    transient: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut sim = Simulation::new(plant, x0, 0.0, dt, plant_scheme(plant, seed))?;
    sim.advance_to(transient, 0.0, |_, _, _| {})?;
    let mut det = CrossingDetector::new(*section, dt);
    det.push(sim.time(), sim.output());
    let deadline = sim.time() + 10.0 * transient.max(100.0);
    loop {
        let (t0, x_prev) = (sim.time(), sim.state().to_vec());
        sim.step(dt, 0.0)?;
        if det.push(sim.time(), sim.output()).is_some() {
            if plant.noise_amplitude().is_none() {
                return Ok(refine_crossing(plant, section, &x_prev, t0, dt).1);
            }
            return Ok(sim.state().to_vec());
        }
        if sim.time() > deadline {
            return Err(Error::ExperimentFailed("no section crossing to anchor the run".into()));
        }
    }
}

/// Runs the plant from a section crossing for `cfg.duration`, estimating
/// `ζ` from the output and applying the tabulated policy from
/// `cfg.control_start` on. A second, unforced run from the same state gives
/// the reference crossings.
pub fn closed_loop<F: VectorField + ?Sized>(
    plant: &F,
    section: &Section,
    anchor: &[f64],
    map: &OutputMapCoefficients,
    p: &ControlProblem,
    table: &CostToGoTable,
    cfg: &ClosedLoopConfig,
) -> Result<ClosedLoopRecord> {
    if !(cfg.plant_dt > 0.0 && cfg.plant_dt <= p.dt) {
        return Err(Error::InvalidArgument(format!(
            "plant step {} must lie in (0, {}]",
            cfg.plant_dt, p.dt
        )));
    }
    let coeffs = &p.coeffs;
    let (u_lo, u_hi) = p.input_bounds();
    let steps = (cfg.duration / p.dt).round() as usize;
    let start_step = (cfg.control_start / p.dt).round() as usize;
    let mut est = EstimatorState::at_crossing(coeffs, cfg.nu, p.dt)?;
    let mut rec = ClosedLoopRecord::default();

    let mut sim = Simulation::new(plant, anchor, 0.0, cfg.plant_dt, plant_scheme(plant, cfg.seed))?;
    let mut det = CrossingDetector::new(*section, cfg.plant_dt);
    det.push(0.0, sim.output());
    let mut window = vec![sim.output()];
    let mut u_prev = 0.0;
    for k in 0..=steps {
        let t = k as f64 * p.dt;
        let y = sim.output();
        if k > 0 {
            window.push(y);
            if window.len() > 3 {
                window.remove(0);
            }
            let y_dot = finite_difference_ydot(&window, p.dt, cfg.ydot)?;
            est = update_state(&est, coeffs, y, y_dot, u_prev, map);
        }
        let u = if k >= start_step {
            optimal_input(est.zeta, k - start_step, table, p).0.clamp(u_lo, u_hi)
        } else {
            0.0
        };
        rec.times.push(t);
        rec.outputs.push(y);
        rec.inputs.push(u);
        rec.estimates.push(est.zeta);
        if k == steps {
            break;
        }
        let crossings = &mut rec.crossings;
        let result = sim.advance_to((k + 1) as f64 * p.dt, u, |tt, yy, _| {
            if let Some(tc) = det.push(tt, yy) {
                crossings.push(tc);
            }
        });
        if let Err(e) = result {
            log::error!("plant diverged at t = {:.3}; returning partial record", sim.time());
            return Err(e);
        }
        u_prev = u;
    }

    let mut reference = Simulation::new(plant, anchor, 0.0, cfg.plant_dt, plant_scheme(plant, cfg.seed))?;
    let mut det = CrossingDetector::new(*section, cfg.plant_dt);
    det.push(0.0, reference.output());
    rec.reference_outputs.push(reference.output());
    for k in 1..=steps {
        let crossings = &mut rec.reference_crossings;
        reference.advance_to(k as f64 * p.dt, 0.0, |tt, yy, _| {
            if let Some(tc) = det.push(tt, yy) {
                crossings.push(tc);
            }
        })?;
        rec.reference_outputs.push(reference.output());
    }
    rec.realized_shift = realized_shift(&rec.crossings, &rec.reference_crossings, cfg.target_shift);
    Ok(rec)
}

/// Advance of the last controlled crossing `c` against the reference
/// crossing closest to `c + target`.
pub fn realized_shift(controlled: &[f64], reference: &[f64], target: f64) -> Option<f64> {
    let c = *controlled.last()?;
    reference
        .iter()
        .map(|r| r - c)
        .min_by(|a, b| (a - target).abs().partial_cmp(&(b - target).abs()).unwrap_or(Ordering::Equal))
}

/// `θ₀` of the phase-shift target that leads the anchored orbit by `advance`
/// time units.
pub fn advance_target_phase(coeffs: &HopfCoefficients, advance: f64) -> f64 {
    (-coeffs.phi + coeffs.omega() * advance).rem_euclid(TAU)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> HopfCoefficients {
        HopfCoefficients::new(1.0, 1.0, -1.0, 0.0, 0.0).unwrap()
    }

    fn problem(cost: StateCost, horizon: usize) -> ControlProblem {
        ControlProblem {
            coeffs: unit(),
            dt: 0.1,
            horizon,
            inputs: input_levels(-0.2, 0.2, 5),
            grid: StateGridSpec {
                points: 21,
                half_width_r0: 2.0,
            },
            state_cost: cost,
            input_cost: InputCost::Quadratic,
            mode: Mode::FiniteHorizon,
            out_of_grid_penalty: None,
        }
    }

    #[test]
    fn hopf_step_examples() {
        let c = unit();
        assert_eq!(hopf_step([0.0, 0.0], 0.0, &c, 1.0), [0.0, 0.0]);
        let z = hopf_step([1.0, 0.0], 0.0, &c, std::f64::consts::FRAC_PI_2);
        assert!(z[0].abs() < 1e-6 && (z[1] - 1.0).abs() < 1e-6);
        let z = hopf_step([0.6, 0.8], 0.0, &c, TAU);
        assert!((z[0] - 0.6).abs() < 1e-6 && (z[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn cost_examples() {
        let c = unit();
        let ps = StateCost::PhaseShift { k: 2.0, theta0: 0.3 };
        let target = StateCost::target(&c, 0.3, 0.5);
        assert_eq!(ps.eval(target, 5, &c, 0.1), 0.0);
        assert!((ps.eval([50.0, 0.0], 0, &c, 0.1) - 2.0).abs() < 1e-15);
        let off = [target[0] + (2f64.ln() / 30.0).sqrt(), target[1]];
        assert!((ps.eval(off, 5, &c, 0.1) - 1.0).abs() < 1e-12);
        let pl = StateCost::Phaseless { k: 1.0 };
        assert_eq!(pl.eval([0.0, 0.0], 0, &c, 0.1), 0.0);
        assert!((pl.eval([(2f64.ln() / 20.0).sqrt(), 0.0], 0, &c, 0.1) - 0.5).abs() < 1e-12);
        assert!((pl.eval([10.0, 10.0], 0, &c, 0.1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_incentive_no_action() {
        let p = problem(StateCost::Zero, 4);
        let t = solve_cost_to_go(&p).unwrap();
        assert!(t.values.iter().flatten().all(|&v| v == 0.0));
        assert!((0..4).all(|i| (0..t.grid.cells()).all(|c| t.policy(i, c) == 0.0)));
        assert_eq!(optimal_input([0.3, -0.1], 2, &t, &p).0, 0.0);
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let g = StateGrid {
            points: 5,
            half_width: 1.0,
        };
        let vals: Vec<f64> = (0..25).map(|c| c as f64).collect();
        for c in 0..25 {
            let s = g.stencil(g.node(c));
            assert!(!s.clamped);
            assert_eq!(g.interpolate(&vals, &s), c as f64);
        }
        assert!(g.stencil([1.5, 0.0]).clamped);
    }

    #[test]
    fn policy_agrees_with_table_at_nodes() {
        let p = problem(StateCost::PhaseShift { k: 1.0, theta0: 0.0 }, 6);
        let t = solve_cost_to_go(&p).unwrap();
        for c in (0..t.grid.cells()).step_by(7) {
            for i in 0..6 {
                let (u, v) = optimal_input(t.grid.node(c), i, &t, &p);
                assert_eq!(u, t.policy(i, c));
                assert_eq!(v, t.value(i, c));
            }
        }
    }

    #[test]
    fn validation() {
        let mut p = problem(StateCost::Zero, 1);
        p.grid.half_width_r0 = 1.2;
        assert!(p.validate().is_err());
        let mut p = problem(StateCost::Zero, 0);
        assert!(p.validate().is_err());
        p.horizon = 1;
        p.inputs.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn tie_order_prefers_small_inputs() {
        let mut p = problem(StateCost::Zero, 1);
        p.inputs = vec![0.2, -0.1, 0.1, -0.2, 0.0];
        let ordered: Vec<f64> = p.tie_order().iter().map(|&q| p.inputs[q]).collect();
        assert_eq!(ordered, vec![0.0, -0.1, 0.1, -0.2, 0.2]);
    }

    #[test]
    fn shift_pairs_nearest_to_target() {
        let reference = [10.0, 34.0, 58.0];
        assert_eq!(realized_shift(&[46.5], &reference, 12.0), Some(11.5));
        assert_eq!(realized_shift(&[], &reference, 12.0), None);
    }
}
