//! Two-pulse identification of the controlled Hopf normal form from output
//! observations.
//!
//! The protocol estimates the period from passive section crossings, applies
//! short pulses at chosen phases, turns the crossing times that follow each
//! pulse into point estimates of the phase response, the (scaled) amplitude
//! response and the slow Floquet exponent, and fits the normal-form
//! coefficients to those points.

use std::f64::consts::{PI, TAU};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::hopf::HopfCoefficients;
use crate::ode::{refine_crossing, CrossingDetector, Scheme, Section, Simulation, VectorField};
use crate::{derive_seed, wrap_angle, wrap_pi};

/// Mean and spread of inter-crossing intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub mean: f64,
    pub std_dev: f64,
    pub cycles: usize,
}

/// Period from a list of section crossing times.
pub fn period_from_crossings(crossings: &[f64]) -> Result<PeriodEstimate> {
    if crossings.len() < 11 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: crossings.len().saturating_sub(1),
        });
    }
    let intervals: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let n = intervals.len() as f64;
    let mean = intervals.iter().sum::<f64>() / n;
    let var = intervals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(PeriodEstimate {
        mean,
        std_dev: var.sqrt(),
        cycles: intervals.len(),
    })
}

/// Period from a sampled output series, ignoring samples before `transient`.
pub fn estimate_period(times: &[f64], outputs: &[f64], section: &Section, transient: f64) -> Result<PeriodEstimate> {
    let window = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut det = CrossingDetector::new(*section, window);
    let crossings: Vec<f64> = times
        .iter()
        .zip(outputs)
        .filter(|(t, _)| **t >= transient)
        .filter_map(|(&t, &y)| det.push(t, y))
        .collect();
    period_from_crossings(&crossings)
}

/// One pulse and the section crossings that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseExperiment {
    pub theta0: f64,
    pub magnitude: f64,
    pub duration: f64,
    /// Section crossing that anchors `θ = 0` before the pulse.
    pub anchor_time: f64,
    /// Midpoint of the pulse, which sits at phase `theta0`.
    pub pulse_center: f64,
    /// Crossings after the pulse, `t*_1, t*_2, ...`.
    pub crossing_times: Vec<f64>,
    pub baseline_period: f64,
}

impl PulseExperiment {
    /// `τ_k − T` for `k = 2, 3, ...` (index 0 holds `k = 2`).
    pub fn interval_deviations(&self) -> Vec<f64> {
        self.crossing_times
            .windows(2)
            .map(|w| w[1] - w[0] - self.baseline_period)
            .collect()
    }

    /// Phase gained relative to the unperturbed schedule `anchor + kT`,
    /// read at crossing `k` (1-based) and wrapped to `(−π, π]`.
    pub fn phase_gain(&self, k: usize) -> f64 {
        let omega = TAU / self.baseline_period;
        wrap_pi(omega * (self.anchor_time - self.crossing_times[k - 1]))
    }

    /// Leading run of intervals whose deviation exceeds `floor · T`, as
    /// crossing indices `k ≥ 2`.
    pub fn significant_intervals(&self, floor: f64) -> Vec<usize> {
        let n = leading_significant(&self.interval_deviations(), floor * self.baseline_period);
        (2..n + 2).collect()
    }
}

/// Settings of a single pulse experiment run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSetup {
    pub dt: f64,
    /// Unforced time before looking for the anchoring crossing.
    pub relax_time: f64,
    pub post_crossings: usize,
    pub baseline_period: f64,
}

fn scheme_for<F: VectorField + ?Sized>(field: &F, seed: u64) -> Scheme {
    if field.noise_amplitude().is_some() {
        Scheme::EulerMaruyama { seed }
    } else {
        Scheme::Rk4
    }
}

/// Relaxes from `x0`, waits for a section crossing, applies `u = m` for `t0`
/// centred `θ0/ω` after it, and records the following crossings.
pub fn run_pulse_experiment<F: VectorField + ?Sized>(
    field: &F,
    section: &Section,
    x0: &[f64],
    theta0: f64,
    magnitude: f64,
    duration: f64,
    setup: &PulseSetup,
    seed: u64,
) -> Result<PulseExperiment> {
    let period = setup.baseline_period;
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline period must be positive, got {period}")));
    }
    if !(duration >= 0.0 && duration < period / 20.0) {
        return Err(Error::InvalidArgument(format!(
            "pulse duration {duration} must be below T/20 = {}",
            period / 20.0
        )));
    }
    if setup.post_crossings < 4 {
        return Err(Error::InvalidArgument("at least 4 post-pulse crossings are needed".into()));
    }
    let fail = |e: Error| Error::ExperimentFailed(e.to_string());
    let mut sim = Simulation::new(field, x0, 0.0, setup.dt, scheme_for(field, seed))?;
    sim.advance_to(setup.relax_time, 0.0, |_, _, _| {}).map_err(fail)?;

    let refine = field.noise_amplitude().is_none();
    let mut det = CrossingDetector::new(*section, setup.dt);
    det.push(sim.time(), sim.output());
    let limit = sim.time() + 3.0 * period;
    let anchor = next_crossing(&mut sim, &mut det, refine, limit)
        .map_err(fail)?
        .ok_or_else(|| Error::ExperimentFailed("no section crossing before the pulse".into()))?;

    let mut pulse_center = anchor + wrap_angle(theta0) / TAU * period;
    if pulse_center - 0.5 * duration < sim.time() {
        pulse_center += period;
    }
    let pulse_start = pulse_center - 0.5 * duration;
    sim.advance_to(pulse_start, 0.0, |_, _, _| {}).map_err(fail)?;
    sim.advance_to(pulse_start + duration, magnitude, |_, _, _| {})
        .map_err(fail)?;

    det.reset();
    det.push(sim.time(), sim.output());
    let mut crossings = Vec::with_capacity(setup.post_crossings);
    let deadline = anchor + (setup.post_crossings as f64 + 3.0) * period;
    while crossings.len() < setup.post_crossings {
        match next_crossing(&mut sim, &mut det, refine, deadline).map_err(fail)? {
            Some(tc) => crossings.push(tc),
            None => {
                return Err(Error::ExperimentFailed(format!(
                    "only {} of {} crossings after the pulse",
                    crossings.len(),
                    setup.post_crossings
                )))
            }
        }
    }
    Ok(PulseExperiment {
        theta0,
        magnitude,
        duration,
        anchor_time: anchor,
        pulse_center,
        crossing_times: crossings,
        baseline_period: period,
    })
}

/// Steps unforced until the detector reports a crossing or `deadline`
/// passes. Deterministic runs re-integrate the last step to locate it.
fn next_crossing<F: VectorField + ?Sized>(
    sim: &mut Simulation<'_, F>,
    det: &mut CrossingDetector,
    refine: bool,
    deadline: f64,
) -> Result<Option<f64>> {
    loop {
        let t0 = sim.time();
        let x0 = refine.then(|| sim.state().to_vec());
        sim.step(sim.dt(), 0.0)?;
        if let Some(tc) = det.push(sim.time(), sim.output()) {
            return Ok(Some(match x0 {
                Some(x) => refine_crossing(sim.field(), &det.section(), &x, t0, sim.time() - t0).0,
                None => tc,
            }));
        }
        if sim.time() > deadline {
            return Ok(None);
        }
    }
}

/// Slow Floquet exponent from the geometric decay of `|τ_k − T|`.
pub fn estimate_kappa(exp: &PulseExperiment, floor: f64) -> Result<f64> {
    kappa_from_deviations(&exp.interval_deviations(), exp.baseline_period, floor)
}

/// Decay fit on a sequence `τ_k − T`, `k = 2, 3, ...`, using its leading run
/// above `floor · T`.
pub fn kappa_from_deviations(dev: &[f64], period: f64, floor: f64) -> Result<f64> {
    let used = leading_significant(dev, floor * period);
    if used < 3 {
        return Err(Error::UnreliableEstimate(format!(
            "{used} interval(s) above the noise floor, need 3"
        )));
    }
    let sign = dev[0].signum();
    if dev[..used].iter().any(|d| d.signum() != sign) {
        return Err(Error::UnreliableEstimate("interval deviations change sign".into()));
    }
    let xs: Vec<f64> = (0..used).map(|j| (j + 2) as f64).collect();
    let ys: Vec<f64> = dev[..used].iter().map(|d| d.abs().ln() / period).collect();
    Ok(linear_slope(&xs, &ys))
}

fn leading_significant(dev: &[f64], threshold: f64) -> usize {
    dev.iter().take_while(|d| d.abs() > threshold).count()
}

fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Phase response at `θ0` from the asymptotic (latest) crossing.
pub fn estimate_z_point(exp: &PulseExperiment) -> f64 {
    let strength = exp.magnitude * exp.duration;
    if strength == 0.0 {
        return 0.0;
    }
    let dtheta = exp.phase_gain(exp.crossing_times.len());
    if dtheta.abs() > 0.9 * PI {
        warn!("phase shift {dtheta:.3} rad is close to the wrap-around; Z estimate may be ambiguous");
    }
    dtheta / strength
}

/// Amplitude response at `θ0` in units of the unknown scale `ρ`, averaged
/// over the crossings whose interval deviation clears the floor.
pub fn estimate_i_point(exp: &PulseExperiment, kappa: f64, floor: f64) -> Result<f64> {
    if !(kappa < 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be negative, got {kappa}")));
    }
    if exp.crossing_times.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: exp.crossing_times.len(),
        });
    }
    let strength = exp.magnitude * exp.duration;
    if strength == 0.0 {
        return Ok(0.0);
    }
    let omega = TAU / exp.baseline_period;
    let t1 = exp.crossing_times[0];
    let kmax = exp.significant_intervals(floor).last().copied().unwrap_or(2);
    let mut sum = 0.0;
    for k in 2..=kmax {
        let tk = exp.crossing_times[k - 1];
        let num = TAU * (k - 1) as f64 - omega * (tk - t1);
        let den = (kappa * (tk - exp.pulse_center)).exp() - (kappa * (t1 - exp.pulse_center)).exp();
        if den.abs() < 1e-12 {
            return Err(Error::DegenerateExperiment(format!("amplitude denominator {den:e} at k = {k}")));
        }
        sum += num / den;
    }
    Ok(sum / (kmax - 1) as f64 / strength)
}

/// Point estimates obtained from one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsePointEstimates {
    pub theta0: f64,
    pub z_hat: f64,
    pub i_hat: f64,
    /// Decay estimate of this experiment alone, if it had enough signal.
    pub kappa_hat: Option<f64>,
}

/// `(φ, C)` with `I(θ) = C cos(θ − φ)`; `φ ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCandidate {
    pub phi: f64,
    pub scale: f64,
}

/// Both cosine fits through `I(0) = i0` and `I(π/2) = i1`.
pub fn fit_phi_c(i0: f64, i1: f64) -> Result<[PhaseCandidate; 2]> {
    fit_phi_c_points(&[(0.0, i0), (PI / 2.0, i1)])
}

/// Least-squares cosine fit through any number of `(θ, I)` points.
pub fn fit_phi_c_points(points: &[(f64, f64)]) -> Result<[PhaseCandidate; 2]> {
    if points.iter().all(|(_, i)| *i == 0.0) {
        return Err(Error::NoAmplitudeResponse);
    }
    let (p, q) = cos_sin_fit(points)?;
    let phi = wrap_angle(q.atan2(p));
    let scale = p.hypot(q);
    Ok([
        PhaseCandidate { phi, scale },
        PhaseCandidate {
            phi: wrap_angle(phi + PI),
            scale: -scale,
        },
    ])
}

/// Least squares for `v(θ) ≈ p cos θ + q sin θ`.
fn cos_sin_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let (mut scc, mut sss, mut scs, mut scv, mut ssv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, v) in points {
        let (s, c) = t.sin_cos();
        scc += c * c;
        sss += s * s;
        scs += c * s;
        scv += c * v;
        ssv += s * v;
    }
    let det = scc * sss - scs * scs;
    if det.abs() < 1e-12 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: 1,
        });
    }
    Ok(((sss * scv - scs * ssv) / det, (scc * ssv - scs * scv) / det))
}

/// Result of the phase-response fit for one `φ` candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub phi: f64,
    pub sin_coeff: f64,
    pub cos_coeff: f64,
    /// RMS residual per point.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFit {
    pub coeffs: HopfCoefficients,
    pub candidates: Vec<CandidateFit>,
    pub selected: usize,
}

/// Fits `Z(θ) = A sin(θ−φ) + B cos(θ−φ)` for each candidate `φ` and maps the
/// selected fit to normal-form coefficients.
pub fn fit_coefficients(
    z_points: &[(f64, f64)],
    kappa: f64,
    period: f64,
    candidates: &[PhaseCandidate],
    residual_bound: f64,
) -> Result<CoefficientFit> {
    if !(kappa < 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be negative, got {kappa}")));
    }
    let mut distinct: Vec<f64> = z_points.iter().map(|(t, _)| wrap_angle(*t)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if distinct.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: distinct.len(),
        });
    }
    let alpha = -kappa / 2.0;
    let fits: Vec<CandidateFit> = candidates
        .iter()
        .map(|c| {
            let shifted: Vec<(f64, f64)> = z_points.iter().map(|&(t, z)| (t - c.phi, z)).collect();
            let (b_cos, a_sin) = cos_sin_fit(&shifted)?;
            let ss: f64 = shifted
                .iter()
                .map(|&(t, z)| (z - a_sin * t.sin() - b_cos * t.cos()).powi(2))
                .sum();
            Ok(CandidateFit {
                phi: c.phi,
                sin_coeff: a_sin,
                cos_coeff: b_cos,
                residual: (ss / shifted.len() as f64).sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    let selected = fits
        .iter()
        .enumerate()
        .filter(|(_, f)| f.sin_coeff < 0.0)
        .min_by(|a, b| a.1.residual.total_cmp(&b.1.residual))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InconsistentData("no phase candidate gives a negative sine coefficient".into()))?;
    let fit = fits[selected];
    if fit.residual > residual_bound {
        warn!(
            "phase response fit residual {:.3e} exceeds bound {:.3e}",
            fit.residual, residual_bound
        );
    }
    let (a_sin, b_cos) = (fit.sin_coeff, fit.cos_coeff);
    let a = -alpha * a_sin * a_sin;
    let b = -alpha * a_sin * b_cos;
    let r0_sq = -alpha / a;
    let beta = TAU / period - b * r0_sq;
    let coeffs = HopfCoefficients::new(alpha, beta, a, b, fit.phi)?;
    Ok(CoefficientFit {
        coeffs,
        candidates: fits,
        selected,
    })
}

/// Which experiments the slow exponent is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KappaSource {
    /// The experiment, or pooled phase, with the largest initial interval
    /// deviation.
    Strongest,
    /// Mean over all experiments that yield an estimate.
    #[default]
    Mean,
}

/// Protocol settings for [`identify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub dt: f64,
    /// Unforced time discarded before passive observation.
    pub transient: f64,
    /// Crossings used for the period estimate.
    pub period_crossings: usize,
    pub magnitude: f64,
    pub duration: f64,
    pub phases: Vec<f64>,
    pub repetitions: usize,
    /// Unforced time before each experiment, in periods.
    pub relax_periods: f64,
    pub post_crossings: usize,
    /// Relative noise floor on `|τ_k − T|/T`.
    pub noise_floor: f64,
    pub kappa_source: KappaSource,
    pub residual_bound: f64,
    pub seed: u64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            transient: 500.0,
            period_crossings: 20,
            magnitude: 0.2,
            duration: 0.1,
            phases: vec![0.0, PI / 2.0],
            repetitions: 1,
            relax_periods: 0.0,
            post_crossings: 10,
            noise_floor: 1e-4,
            kappa_source: KappaSource::Mean,
            residual_bound: f64::INFINITY,
            seed: 0,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.period_crossings < 10 {
            return bad("period estimation needs at least 10 crossings".into());
        }
        if self.phases.len() < 2 {
            return bad("at least two pulse phases are needed".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if !(self.duration > 0.0) {
            return bad(format!("pulse duration must be positive, got {}", self.duration));
        }
        if !(self.noise_floor >= 0.0) {
            return bad("noise floor must be nonnegative".into());
        }
        Ok(())
    }
}

/// Everything [`identify`] measured on the way to the coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identification {
    pub coeffs: HopfCoefficients,
    pub period: PeriodEstimate,
    pub kappa: f64,
    pub experiments: Vec<PulseExperiment>,
    pub points: Vec<ResponsePointEstimates>,
    /// Per-phase means used in the fits: `(θ0, Z, I)`.
    pub averaged: Vec<(f64, f64, f64)>,
    pub phase_candidates: [PhaseCandidate; 2],
    pub fit: CoefficientFit,
    /// State at the end of passive observation (relaxed, near the section).
    pub relaxed_state: Vec<f64>,
}

/// Passive observation: discards `transient`, then records crossings.
pub fn observe_period<F: VectorField + ?Sized>(
    field: &F,
    section: &Section,
    x0: &[f64],
    dt: f64,
    transient: f64,
    crossings: usize,
    seed: u64,
) -> Result<(PeriodEstimate, Vec<f64>, Vec<f64>)> {
    let mut sim = Simulation::new(field, x0, 0.0, dt, scheme_for(field, seed))?;
    sim.advance_to(transient, 0.0, |_, _, _| {})?;
    let refine = field.noise_amplitude().is_none();
    let mut det = CrossingDetector::new(*section, dt);
    det.push(sim.time(), sim.output());
    let mut times = Vec::with_capacity(crossings + 1);
    let patience = 10.0 * transient.max(100.0);
    while times.len() < crossings + 1 {
        let deadline = sim.time() + patience;
        match next_crossing(&mut sim, &mut det, refine, deadline)? {
            Some(tc) => times.push(tc),
            None => {
                return Err(Error::InsufficientData {
                    needed: crossings,
                    got: times.len().saturating_sub(1),
                })
            }
        }
    }
    Ok((period_from_crossings(&times)?, times, sim.state().to_vec()))
}

/// Runs the full protocol: period, pulses at every configured phase
/// (repeated for noisy systems), point estimates, and coefficient fits.
pub fn identify<F: VectorField + ?Sized>(
    field: &F,
    section: &Section,
    x0: &[f64],
    cfg: &IdentifyConfig,
) -> Result<Identification> {
    cfg.validate()?;
    let (period, _, relaxed) = observe_period(
        field,
        section,
        x0,
        cfg.dt,
        cfg.transient,
        cfg.period_crossings,
        derive_seed(cfg.seed, u64::MAX),
    )?;
    let setup = PulseSetup {
        dt: cfg.dt,
        relax_time: cfg.relax_periods * period.mean,
        post_crossings: cfg.post_crossings,
        baseline_period: period.mean,
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.phases.len())
        .flat_map(|p| (0..cfg.repetitions).map(move |r| (p, r)))
        .collect();
    let experiments: Vec<PulseExperiment> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let seed = derive_seed(cfg.seed, (p * cfg.repetitions + r) as u64);
            run_pulse_experiment(field, section, &relaxed, cfg.phases[p], cfg.magnitude, cfg.duration, &setup, seed)
        })
        .collect::<Result<_>>()?;

    let kappas: Vec<Option<f64>> = experiments
        .iter()
        .map(|e| estimate_kappa(e, cfg.noise_floor).ok())
        .collect();
    // Repeated trials are pooled per phase before the decay fit; a single
    // noisy interval sequence rarely keeps one sign.
    let decays: Vec<(f64, Option<f64>)> = if cfg.repetitions > 1 {
        experiments
            .chunks(cfg.repetitions)
            .map(|trials| {
                let dev = mean_deviations(trials);
                let strength = dev.first().map_or(0.0, |d| d.abs());
                (strength, kappa_from_deviations(&dev, period.mean, cfg.noise_floor).ok())
            })
            .collect()
    } else {
        experiments
            .iter()
            .zip(&kappas)
            .map(|(e, k)| (e.interval_deviations().first().map_or(0.0, |d| d.abs()), *k))
            .collect()
    };
    let kappa = select_kappa(&decays, cfg.kappa_source)?;

    let points: Vec<ResponsePointEstimates> = experiments
        .iter()
        .zip(&kappas)
        .map(|(e, k)| {
            Ok(ResponsePointEstimates {
                theta0: e.theta0,
                z_hat: estimate_z_point(e),
                i_hat: estimate_i_point(e, kappa, cfg.noise_floor)?,
                kappa_hat: *k,
            })
        })
        .collect::<Result<_>>()?;

    let averaged: Vec<(f64, f64, f64)> = cfg
        .phases
        .iter()
        .enumerate()
        .map(|(p, &theta)| {
            let chunk = &points[p * cfg.repetitions..(p + 1) * cfg.repetitions];
            let n = chunk.len() as f64;
            (
                theta,
                chunk.iter().map(|q| q.z_hat).sum::<f64>() / n,
                chunk.iter().map(|q| q.i_hat).sum::<f64>() / n,
            )
        })
        .collect();

    let i_points: Vec<(f64, f64)> = averaged.iter().map(|&(t, _, i)| (t, i)).collect();
    let z_points: Vec<(f64, f64)> = averaged.iter().map(|&(t, z, _)| (t, z)).collect();
    let phase_candidates = fit_phi_c_points(&i_points)?;
    let fit = fit_coefficients(&z_points, kappa, period.mean, &phase_candidates, cfg.residual_bound)?;
    Ok(Identification {
        coeffs: fit.coeffs,
        period,
        kappa,
        experiments,
        points,
        averaged,
        phase_candidates,
        fit,
        relaxed_state: relaxed,
    })
}

/// Element-wise mean of `τ_k − T` over trials, truncated to the shortest.
pub fn mean_deviations(trials: &[PulseExperiment]) -> Vec<f64> {
    let seqs: Vec<Vec<f64>> = trials.iter().map(PulseExperiment::interval_deviations).collect();
    let len = seqs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|k| seqs.iter().map(|s| s[k]).sum::<f64>() / seqs.len() as f64)
        .collect()
}

/// Picks the decay rate from `(strength, estimate)` pairs.
fn select_kappa(decays: &[(f64, Option<f64>)], source: KappaSource) -> Result<f64> {
    let available: Vec<(f64, f64)> = decays
        .iter()
        .filter_map(|&(s, k)| k.filter(|v| *v < 0.0).map(|v| (s, v)))
        .collect();
    if available.is_empty() {
        return Err(Error::UnreliableEstimate(
            "no pulse experiment produced a decay-rate estimate".into(),
        ));
    }
    Ok(match source {
        KappaSource::Strongest => {
            available
                .iter()
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .expect("nonempty")
                .1
        }
        KappaSource::Mean => available.iter().map(|&(_, k)| k).sum::<f64>() / available.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(kappa: f64, period: f64, n: usize) -> PulseExperiment {
        // τ_k = T + 0.1 exp(κ k T) T, k ≥ 2.
        let mut times = vec![10.0];
        for k in 2..=n {
            let tau = period + 0.1 * (kappa * k as f64 * period).exp() * period;
            times.push(times.last().unwrap() + tau);
        }
        PulseExperiment {
            theta0: 0.0,
            magnitude: 1.0,
            duration: 0.1,
            anchor_time: 0.0,
            pulse_center: 0.0,
            crossing_times: times,
            baseline_period: period,
        }
    }

    #[test]
    fn kappa_from_exact_geometric_decay() {
        let e = synthetic(-0.05, 24.0, 6);
        assert!((estimate_kappa(&e, 1e-4).unwrap() + 0.05).abs() < 1e-6);
    }

    #[test]
    fn kappa_needs_three_intervals() {
        let e = synthetic(-0.5, 24.0, 8);
        assert!(matches!(estimate_kappa(&e, 1e-4), Err(Error::UnreliableEstimate(_))));
    }

    #[test]
    fn kappa_rejects_sign_flips() {
        let mut e = synthetic(-0.01, 24.0, 6);
        let last = e.crossing_times.len() - 1;
        e.crossing_times[last] -= 1.0;
        assert!(matches!(estimate_kappa(&e, 1e-4), Err(Error::UnreliableEstimate(_))));
    }

    #[test]
    fn z_point_arithmetic() {
        // Δθ = 0.1 with m t0 = 0.1: latest crossing early by 0.1/ω.
        let period = TAU;
        let e = PulseExperiment {
            theta0: 0.0,
            magnitude: 0.5,
            duration: 0.2,
            anchor_time: 0.0,
            pulse_center: 0.0,
            crossing_times: (1..=5).map(|k| k as f64 * period - 0.1).collect(),
            baseline_period: period,
        };
        assert!((estimate_z_point(&e) - 1.0).abs() < 1e-12);
        let null = PulseExperiment { magnitude: 0.0, ..e };
        assert_eq!(estimate_z_point(&null), 0.0);
    }

    #[test]
    fn pure_phase_shift_has_no_amplitude_response() {
        let period = 24.0;
        let e = PulseExperiment {
            theta0: 0.0,
            magnitude: 0.5,
            duration: 0.2,
            anchor_time: 0.0,
            pulse_center: 0.0,
            crossing_times: (1..=6).map(|k| k as f64 * period + 0.3).collect(),
            baseline_period: period,
        };
        assert!(estimate_i_point(&e, -0.05, 1e-4).unwrap().abs() < 1e-10);
    }

    #[test]
    fn phi_c_examples() {
        let [a, b] = fit_phi_c(1.0, 0.0).unwrap();
        assert!(a.phi.abs() < 1e-15 && (a.scale - 1.0).abs() < 1e-15);
        assert!((b.phi - PI).abs() < 1e-15 && (b.scale + 1.0).abs() < 1e-15);
        let [a, b] = fit_phi_c(0.0, 2.0).unwrap();
        assert!((a.phi - PI / 2.0).abs() < 1e-15 && (a.scale - 2.0).abs() < 1e-15);
        assert!((b.phi - 1.5 * PI).abs() < 1e-15 && (b.scale + 2.0).abs() < 1e-15);
        let [a, b] = fit_phi_c(1.0, 1.0).unwrap();
        assert!((a.phi - PI / 4.0).abs() < 1e-15 && (a.scale - 2f64.sqrt()).abs() < 1e-15);
        assert!((b.phi - 1.25 * PI).abs() < 1e-15 && (b.scale + 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(fit_phi_c(0.0, 0.0), Err(Error::NoAmplitudeResponse)));
    }

    #[test]
    fn inverts_unit_hopf() {
        let cands = fit_phi_c(1.0, 0.0).unwrap();
        let fit = fit_coefficients(&[(0.0, 0.0), (PI / 2.0, -1.0)], -2.0, TAU, &cands, f64::INFINITY).unwrap();
        let c = fit.coeffs;
        assert!((c.alpha - 1.0).abs() < 1e-15);
        assert!((c.a + 1.0).abs() < 1e-12);
        assert!(c.b.abs() < 1e-12);
        assert!((c.beta - 1.0).abs() < 1e-12);
        assert!(c.phi.abs() < 1e-12);
        assert!(fit.candidates[fit.selected].sin_coeff < 0.0);
    }

    #[test]
    fn candidates_tie_and_sign_decides() {
        let cands = fit_phi_c(0.3, 0.8).unwrap();
        let fit = fit_coefficients(&[(0.0, 0.4), (PI / 2.0, -0.9)], -0.1, 20.0, &cands, f64::INFINITY).unwrap();
        let r = &fit.candidates;
        assert!((r[0].residual - r[1].residual).abs() < 1e-12);
        assert!((r[0].sin_coeff + r[1].sin_coeff).abs() < 1e-12);
        assert!(r[fit.selected].sin_coeff < 0.0);
    }

    #[test]
    fn period_needs_ten_intervals() {
        let c: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert!(matches!(period_from_crossings(&c), Err(Error::InsufficientData { .. })));
        let c: Vec<f64> = (0..11).map(|k| 2.0 * k as f64).collect();
        assert_eq!(period_from_crossings(&c).unwrap().mean, 2.0);
    }
}
