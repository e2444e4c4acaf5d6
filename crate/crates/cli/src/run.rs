//! Command implementations. Each writes its CSVs into the output directory
//! next to the resolved configuration.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hopfid::control::{
    advance_target_phase, anchor_state, closed_loop, input_levels, solve_or_load, ClosedLoopConfig, ClosedLoopRecord,
    ControlProblem, StateCost,
};
use hopfid::estimator::{fit_output_map, orbit_output_profile, output_map_residual, OutputMapCoefficients};
use hopfid::ident::{identify, Identification};
use hopfid::ode::{CrossingDetector, Scheme, Simulation};
use hopfid::reduction::{adjoint_i, adjoint_z, find_limit_cycle, monodromy, LimitCycleOptions};
use hopfid::{derive_seed, HopfCoefficients, HopfField, LinearOutput, Section, VectorField};

use crate::config::{ControlConfig, ExperimentConfig, ModelConfig, TaskConfig};
use crate::input::InputSchedule;
use crate::report::{opt, write_checks, write_rows, Check, Report};

/// What a command produced: the report and any tolerance checks.
#[derive(Debug, Default)]
pub struct Outcome {
    pub report: Report,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn finish(&self, dir: &Path) -> Result<()> {
        self.report.write(&dir.join("report.csv"))?;
        if !self.checks.is_empty() {
            write_checks(&dir.join("checks.csv"), &self.checks)?;
        }
        self.report.print();
        for c in &self.checks {
            println!("{}", c.line());
        }
        Ok(())
    }
}

/// Creates the output directory and writes the resolved configuration.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let text = toml::to_string_pretty(&cfg.resolved())?;
    fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(dir)
}

fn scheme_for(field: &dyn VectorField, seed: u64) -> Scheme {
    if field.noise_amplitude().is_some() {
        Scheme::EulerMaruyama { seed }
    } else {
        Scheme::Rk4
    }
}

#[derive(Debug, Default)]
struct Recorded {
    times: Vec<f64>,
    outputs: Vec<f64>,
    inputs: Vec<f64>,
    crossings: Vec<f64>,
}

/// Runs `field` under `input(t)` with `t` measured from `x0`, sampling every
/// `every` steps and detecting crossings at every step.
fn record_run(
    field: &dyn VectorField,
    section: &Section,
    x0: &[f64],
    dt: f64,
    duration: f64,
    every: usize,
    input: impl Fn(f64) -> f64,
    seed: u64,
) -> Result<Recorded> {
    let mut sim = Simulation::new(field, x0, 0.0, dt, scheme_for(field, seed))?;
    let mut det = CrossingDetector::new(*section, dt);
    det.push(0.0, sim.output());
    let steps = (duration / dt).round() as usize;
    let mut rec = Recorded::default();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = input(t);
        if k % every == 0 {
            rec.times.push(t);
            rec.outputs.push(sim.output());
            rec.inputs.push(u);
        }
        if k == steps {
            break;
        }
        sim.step(dt, u)?;
        if let Some(tc) = det.push(sim.time(), sim.output()) {
            rec.crossings.push(tc);
        }
    }
    Ok(rec)
}

fn relax(field: &dyn VectorField, x0: &[f64], dt: f64, transient: f64, seed: u64) -> Result<Vec<f64>> {
    let mut sim = Simulation::new(field, x0, 0.0, dt, scheme_for(field, seed))?;
    sim.advance_to(transient, 0.0, |_, _, _| {})?;
    Ok(sim.state().to_vec())
}

fn period_stats(crossings: &[f64]) -> Option<(f64, f64)> {
    if crossings.len() < 2 {
        return None;
    }
    let d: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Some((mean, var.sqrt()))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let field = cfg.model.build()?;
    let section = cfg.section();
    let s = &cfg.simulate;
    let schedule = s.input.as_deref().map(InputSchedule::parse).transpose().map_err(anyhow::Error::msg)?;
    let seed = derive_seed(cfg.seed, 1);
    let x = relax(field.as_ref(), &cfg.initial_state(), s.dt, s.transient, derive_seed(seed, 0))?;
    let every = ((s.sample_interval / s.dt).round() as usize).max(1);
    let rec = record_run(
        field.as_ref(),
        &section,
        &x,
        s.dt,
        s.duration,
        every,
        |t| schedule.as_ref().map_or(0.0, |sch| sch.eval(t)),
        derive_seed(seed, 1),
    )?;
    if rec.inputs.iter().any(|u| !u.is_finite()) {
        bail!("simulate.input produced a non-finite value");
    }
    write_rows(
        &dir.join("trajectory.csv"),
        &["time", "output", "input"],
        rec.times.iter().zip(&rec.outputs).zip(&rec.inputs).map(|((t, y), u)| (t, y, u)),
    )?;
    write_crossings(&dir.join("crossings.csv"), &[("run", &rec.crossings)])?;

    let mut out = Outcome::default();
    out.report.add("model", cfg.model.name());
    out.report.add("crossings", rec.crossings.len());
    if let Some((mean, std)) = period_stats(&rec.crossings) {
        out.report.add("period_mean", mean);
        out.report.add("period_std", std);
    }
    if let ModelConfig::Hopf { coefficients, .. } = &cfg.model {
        out.report.add("model_period", TAU / coefficients.omega());
    }
    out.finish(&dir)?;
    Ok(out)
}

fn write_crossings(path: &Path, runs: &[(&str, &[f64])]) -> Result<()> {
    write_rows(
        path,
        &["run", "index", "time"],
        runs.iter()
            .flat_map(|(name, times)| times.iter().enumerate().map(move |(i, t)| (*name, i + 1, *t))),
    )
}

fn add_coefficients(r: &mut Report, prefix: &str, c: &HopfCoefficients) {
    r.add(format!("{prefix}alpha"), c.alpha);
    r.add(format!("{prefix}beta"), c.beta);
    r.add(format!("{prefix}a"), c.a);
    r.add(format!("{prefix}b"), c.b);
    r.add(format!("{prefix}phi"), c.phi);
    r.add(format!("{prefix}r0"), c.r0());
    r.add(format!("{prefix}omega"), c.omega());
    r.add(format!("{prefix}kappa1"), c.kappa1());
}

/// Runs the pulse protocol and writes `experiments.csv`, `intervals.csv`,
/// `candidates.csv` and `coefficients.toml`.
pub fn run_identification(cfg: &ExperimentConfig, dir: &Path, report: &mut Report) -> Result<Identification> {
    let field = cfg.model.build()?;
    let section = cfg.section();
    let mut icfg = cfg.identify.clone();
    icfg.seed = cfg.seed;
    let started = Instant::now();
    let id = identify(field.as_ref(), &section, &cfg.initial_state(), &icfg)
        .context("identification failed")?;

    write_rows(
        &dir.join("experiments.csv"),
        &["theta0", "trial", "magnitude", "duration", "z_hat", "i_hat", "kappa_hat"],
        id.points.iter().zip(&id.experiments).enumerate().map(|(j, (p, e))| {
            (p.theta0, j % icfg.repetitions, e.magnitude, e.duration, p.z_hat, p.i_hat, opt(p.kappa_hat))
        }),
    )?;
    write_rows(
        &dir.join("intervals.csv"),
        &["experiment", "k", "crossing_time", "deviation"],
        id.experiments.iter().enumerate().flat_map(|(j, e)| {
            let dev = e.interval_deviations();
            e.crossing_times.iter().enumerate().map(move |(i, &t)| {
                (j, i + 1, t - e.pulse_center, if i == 0 { String::new() } else { dev[i - 1].to_string() })
            })
        }),
    )?;
    write_rows(
        &dir.join("candidates.csv"),
        &["phi", "sin_coeff", "cos_coeff", "residual", "selected"],
        id.fit.candidates.iter().enumerate().map(|(j, c)| {
            (c.phi, c.sin_coeff, c.cos_coeff, c.residual, j == id.fit.selected)
        }),
    )?;
    fs::write(dir.join("coefficients.toml"), toml::to_string_pretty(&id.coeffs)?)?;

    report.add("period_mean", id.period.mean);
    report.add("period_std", id.period.std_dev);
    report.add("period_cycles", id.period.cycles);
    report.add("kappa_hat", id.kappa);
    add_coefficients(report, "", &id.coeffs);
    let sel = &id.fit.candidates[id.fit.selected];
    report.add("fit_residual", sel.residual);
    report.add("consistency_error", id.coeffs.consistency().max());
    report.add("identify_seconds", format!("{:.2}", started.elapsed().as_secs_f64()));
    Ok(id)
}

pub fn identify_command(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let mut out = Outcome::default();
    let id = run_identification(cfg, &dir, &mut out.report)?;
    if let ModelConfig::Hopf {
        coefficients,
        output,
    } = &cfg.model
    {
        let truth_phi = HopfField::new(*coefficients, *output).section_phase(&cfg.section())?;
        let c = &id.coeffs;
        out.checks.extend([
            Check::relative("alpha", c.alpha, coefficients.alpha, 0.05),
            Check::relative("beta", c.beta, coefficients.beta, 0.05),
            Check::relative("a", c.a, coefficients.a, 0.05),
            Check::relative("b", c.b, coefficients.b, 0.05),
            Check::angle("phi", c.phi, truth_phi, 0.05),
        ]);
    }
    out.finish(&dir)?;
    Ok(out)
}

/// Output map fitted on the plant's orbit profile.
pub fn output_map(
    cfg: &ExperimentConfig,
    ctl: &ControlConfig,
    coeffs: &HopfCoefficients,
    report: &mut Report,
    dir: &Path,
) -> Result<OutputMapCoefficients> {
    let field = cfg.model.build()?;
    let (thetas, ys) = orbit_output_profile(
        field.as_ref(),
        &cfg.section(),
        &cfg.initial_state(),
        ctl.plant_dt,
        ctl.transient,
        ctl.profile_cycles,
        derive_seed(cfg.seed, 3),
    )?;
    let map = fit_output_map(&thetas, &ys, coeffs)?;
    let residual = output_map_residual(&thetas, &ys, &map, coeffs);
    let range = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    write_rows(
        &dir.join("orbit_profile.csv"),
        &["theta", "output", "model_output"],
        thetas.iter().zip(&ys).map(|(&t, &y)| (t, y, map.output(coeffs.orbit_point(t - coeffs.phi)))),
    )?;
    report.add("map_c0", map.c0);
    report.add("map_c1", map.c1);
    report.add("map_c2", map.c2);
    report.add("map_c3", map.c3);
    report.add("map_c4", map.c4);
    report.add("map_condition", map.condition);
    report.add("map_residual_rel_range", residual / range);
    Ok(map)
}

pub fn control_problem(ctl: &ControlConfig, coeffs: &HopfCoefficients) -> ControlProblem {
    let state_cost = match ctl.task {
        TaskConfig::PhaseShift { k, advance } => StateCost::PhaseShift {
            k,
            theta0: advance_target_phase(coeffs, advance),
        },
        TaskConfig::Phaseless { k } => StateCost::Phaseless { k },
        TaskConfig::Zero => StateCost::Zero,
    };
    ControlProblem {
        coeffs: *coeffs,
        dt: ctl.dt,
        horizon: ctl.horizon,
        inputs: input_levels(ctl.input_min, ctl.input_max, ctl.input_levels),
        grid: ctl.grid,
        state_cost,
        input_cost: ctl.input_cost,
        mode: ctl.mode,
        out_of_grid_penalty: ctl.out_of_grid_penalty,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Identification (unless coefficients are given), map fit, DP solve or
/// cache load, and the closed-loop run.
pub fn control_command(cfg: &ExperimentConfig) -> Result<(Outcome, ClosedLoopRecord, HopfCoefficients)> {
    let dir = prepare(cfg)?;
    let ctl = cfg
        .control
        .clone()
        .context("the configuration has no [control] table")?;
    let mut out = Outcome::default();
    let coeffs = match ctl.coefficients {
        Some(c) => {
            add_coefficients(&mut out.report, "", &c);
            c
        }
        None => run_identification(cfg, &dir, &mut out.report)?.coeffs,
    };
    let map = output_map(cfg, &ctl, &coeffs, &mut out.report, &dir)?;
    let problem = control_problem(&ctl, &coeffs);
    problem.validate()?;

    let cache_dir = ctl.cache_dir.clone().unwrap_or_else(|| dir.join("cache"));
    let cache = cache_dir.join(format!("{}.ctg", &hex(&problem.fingerprint())[..16]));
    let started = Instant::now();
    let (table, hit) = solve_or_load(&problem, &cache)?;
    out.report.add("cache_file", cache.display());
    out.report.add("cache_hit", hit);
    out.report.add("table_seconds", format!("{:.2}", started.elapsed().as_secs_f64()));

    let field = cfg.model.build()?;
    let section = cfg.section();
    let seed = derive_seed(cfg.seed, 2);
    let anchor = anchor_state(field.as_ref(), &section, &cfg.initial_state(), ctl.plant_dt, ctl.transient, seed)?;
    let target_shift = match ctl.task {
        TaskConfig::PhaseShift { advance, .. } => advance,
        _ => 0.0,
    };
    let run_cfg = ClosedLoopConfig {
        nu: ctl.nu,
        plant_dt: ctl.plant_dt,
        transient: ctl.transient,
        duration: ctl.duration,
        control_start: ctl.control_start,
        ydot: ctl.ydot,
        target_shift,
        seed: derive_seed(seed, 1),
    };
    let started = Instant::now();
    let rec = closed_loop(field.as_ref(), &section, &anchor, &map, &problem, &table, &run_cfg)?;
    out.report.add("closed_loop_seconds", format!("{:.2}", started.elapsed().as_secs_f64()));

    write_rows(
        &dir.join("closed_loop.csv"),
        &["time", "output", "input", "x_hat", "y_hat", "model_output", "reference_output"],
        (0..rec.times.len()).map(|k| {
            let z = rec.estimates[k];
            (rec.times[k], rec.outputs[k], rec.inputs[k], z[0], z[1], map.output(z), rec.reference_outputs[k])
        }),
    )?;
    write_crossings(
        &dir.join("crossings.csv"),
        &[("controlled", &rec.crossings), ("reference", &rec.reference_crossings)],
    )?;
    out.report.add("realized_shift", opt(rec.realized_shift));
    let settle = ctl.control_start + 2.0 * coeffs.period();
    let norms: Vec<f64> = rec
        .times
        .iter()
        .zip(&rec.estimates)
        .filter(|(t, _)| **t >= settle)
        .map(|(_, z)| z[0].hypot(z[1]) / coeffs.r0())
        .collect();
    if !norms.is_empty() {
        out.report.add("settled_from", settle);
        out.report.add("mean_norm_over_r0", norms.iter().sum::<f64>() / norms.len() as f64);
        out.report.add("max_norm_over_r0", norms.iter().cloned().fold(0.0, f64::max));
    }
    let late: Vec<usize> = (0..rec.times.len()).filter(|&k| rec.times[k] >= settle).collect();
    if late.len() > 1 {
        let std = |v: &[f64]| {
            let xs: Vec<f64> = late.iter().map(|&k| v[k]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
        };
        out.report.add("output_std_ratio", std(&rec.outputs) / std(&rec.reference_outputs));
    }
    let energy: f64 = rec.inputs.iter().map(|u| u * u).sum::<f64>() * ctl.dt;
    out.report.add("input_energy", energy);
    Ok((out, rec, coeffs))
}

pub fn curves_command(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let field = cfg.model.build()?;
    if field.noise_amplitude().is_some() {
        bail!("response curves need a deterministic model; the {} model is stochastic", cfg.model.name());
    }
    let section = cfg.section();
    let opts = LimitCycleOptions {
        dt: cfg.curves.dt,
        grid_points: cfg.curves.grid_points,
        ..LimitCycleOptions::default()
    };
    let mut out = Outcome::default();
    let lc = find_limit_cycle(field.as_ref(), &section, &cfg.initial_state(), &opts)?;
    let floquet = monodromy(field.as_ref(), &lc)?;
    let z = adjoint_z(field.as_ref(), &lc)?;
    let i = match adjoint_i(field.as_ref(), &lc, &floquet, &z) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("amplitude response unavailable: {e}");
            out.report.add("amplitude_response", e);
            None
        }
    };
    out.report.add("period", lc.period);
    out.report.add("closure_gap", lc.closure_gap);
    let k1 = floquet.kappa1();
    out.report.add("kappa1_re", k1.re);
    out.report.add("kappa1_im", k1.im);
    write_rows(
        &dir.join("floquet.csv"),
        &["index", "re", "im", "modulus"],
        floquet.multipliers.iter().enumerate().map(|(j, m)| (j, m.re, m.im, m.norm())),
    )?;

    let closed_form = match &cfg.model {
        ModelConfig::Hopf {
            coefficients,
            output,
        } => {
            let phi = HopfField::new(*coefficients, *output).section_phase(&section)?;
            Some(HopfCoefficients { phi, ..*coefficients })
        }
        _ => None,
    };
    let thetas = lc.theta_grid();
    let outputs = lc.outputs(field.as_ref());
    write_rows(
        &dir.join("curves.csv"),
        &["theta", "output", "z", "i", "z_closed_form", "i_shape"],
        thetas.iter().enumerate().map(|(j, &th)| {
            (
                th,
                outputs[j],
                z.response[j],
                opt(i.as_ref().map(|c| c.response[j])),
                opt(closed_form.map(|c| c.z_at(th))),
                opt(closed_form.map(|c| (th - c.phi).cos())),
            )
        }),
    )?;
    out.finish(&dir)?;
    Ok(out)
}

/// Crossing times of the normal-form model through its own phase zero
/// (`θ̂ = −φ`) under `input`, started there at `t = 0`.
pub fn model_crossings(
    coeffs: &HopfCoefficients,
    map: &OutputMapCoefficients,
    dt: f64,
    duration: f64,
    every: usize,
    input: impl Fn(f64) -> f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (s, c) = coeffs.phi.sin_cos();
    let phase_probe = HopfField::new(*coeffs, LinearOutput { c0: 0.0, c1: s, c2: c });
    let x0 = coeffs.orbit_point(-coeffs.phi);
    let rec = record_run(&phase_probe, &Section::rising(0.0), &x0, dt, duration, every, &input, 0)?;
    // Re-run on the mapped output for the trace itself.
    let mut sim = Simulation::new(&phase_probe, &x0, 0.0, dt, Scheme::Rk4)?;
    let steps = (duration / dt).round() as usize;
    let mut outputs = Vec::with_capacity(steps / every + 1);
    for k in 0..=steps {
        if k % every == 0 {
            let x = sim.state();
            outputs.push(map.output([x[0], x[1]]));
        }
        if k < steps {
            sim.step(dt, input(k as f64 * dt))?;
        }
    }
    Ok((rec.crossings, outputs))
}

/// Open-loop comparison of plant and identified model under one input.
pub fn open_loop_comparison(
    cfg: &ExperimentConfig,
    coeffs: &HopfCoefficients,
    map: &OutputMapCoefficients,
    input: &InputSchedule,
    duration: f64,
    transient: f64,
    dir: &Path,
    report: &mut Report,
) -> Result<f64> {
    let field = cfg.model.build()?;
    let section = cfg.section();
    let dt = cfg.simulate.dt;
    let seed = derive_seed(cfg.seed, 4);
    let anchor = anchor_state(field.as_ref(), &section, &cfg.initial_state(), dt, transient, seed)?;
    let every = ((cfg.simulate.sample_interval / dt).round() as usize).max(1);
    let plant = record_run(field.as_ref(), &section, &anchor, dt, duration, every, |t| input.eval(t), derive_seed(seed, 1))?;
    let (model, model_outputs) = model_crossings(coeffs, map, dt, duration, every, |t| input.eval(t))?;
    write_rows(
        &dir.join("open_loop.csv"),
        &["time", "input", "plant_output", "model_output"],
        (0..plant.times.len()).map(|k| (plant.times[k], plant.inputs[k], plant.outputs[k], model_outputs[k])),
    )?;
    write_crossings(&dir.join("crossings.csv"), &[("plant", &plant.crossings), ("model", &model)])?;
    let rms = crossing_rms(&plant.crossings, &model)
        .context("no crossings to compare between plant and model")?;
    report.add("plant_crossings", plant.crossings.len());
    report.add("model_crossings", model.len());
    report.add("crossing_rms", rms);
    Ok(rms)
}

/// RMS distance from each plant crossing to the nearest model crossing.
pub fn crossing_rms(plant: &[f64], model: &[f64]) -> Option<f64> {
    if plant.is_empty() || model.is_empty() {
        return None;
    }
    let ss: f64 = plant
        .iter()
        .map(|p| model.iter().map(|m| (m - p).abs()).fold(f64::INFINITY, f64::min).powi(2))
        .sum();
    Some((ss / plant.len() as f64).sqrt())
}
