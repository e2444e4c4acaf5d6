//! Bundled settings for the published experiments (`reproduce figN`).

use std::f64::consts::PI;
use std::path::PathBuf;

use anyhow::{Context, Result};
use hopfid::control::Mode;
use hopfid::ident::IdentifyConfig;
use hopfid::{HopfCoefficients, LeloupParameters, PopulationParameters};

use crate::config::{ControlConfig, ExperimentConfig, ModelConfig, TaskConfig};
use crate::input::InputSchedule;
use crate::report::Check;
use crate::run::{self, Outcome};

/// Open-loop test input for the population comparison.
pub const OPEN_LOOP_INPUT: &str = "max(0.02*sin(0.24*t) + 0.02*cos(0.15*t) + 0.025*sin(0.4*t), 0)";

const LELOUP_TARGET: [f64; 5] = [0.0224, 0.2721, -0.0106, -0.0034, 1.005];
const POPULATION_TARGET: [f64; 5] = [0.0034, 0.27, -0.41, -1.24, 1.30];
const POPULATION_PERIOD: f64 = 24.17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    /// Leloup pulse identification and response curves.
    Fig2,
    /// Leloup 12-hour phase advance.
    Fig3,
    /// Population identification.
    Fig4,
    /// Population open-loop comparison against the identified model.
    Fig5,
    /// Population phaseless control.
    Fig6,
}

#[derive(Debug, Clone)]
pub struct PresetOptions {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Population size.
    pub oscillators: usize,
    /// Skip identification and use these coefficients (figs 3, 5, 6).
    pub coefficients: Option<HopfCoefficients>,
    pub cache_dir: Option<PathBuf>,
}

fn leloup_identify() -> IdentifyConfig {
    IdentifyConfig {
        transient: 1000.0,
        magnitude: 0.2,
        duration: 0.1,
        phases: vec![0.0, PI / 2.0],
        post_crossings: 12,
        noise_floor: 1e-6,
        ..IdentifyConfig::default()
    }
}

fn population_identify() -> IdentifyConfig {
    IdentifyConfig {
        transient: 500.0,
        period_crossings: 231,
        magnitude: 0.02,
        duration: 1.0,
        phases: (0..8).map(|j| j as f64 * PI / 4.0).collect(),
        repetitions: 20,
        noise_floor: 2e-3,
        ..IdentifyConfig::default()
    }
}

/// The configuration a preset runs with.
pub fn preset_config(figure: Figure, opts: &PresetOptions) -> ExperimentConfig {
    let leloup = ModelConfig::Leloup {
        parameters: LeloupParameters::default(),
        output: "MP".into(),
    };
    let population = ModelConfig::Population {
        parameters: PopulationParameters {
            n_oscillators: opts.oscillators,
            ..PopulationParameters::default()
        },
    };
    let (model, identify) = match figure {
        Figure::Fig2 | Figure::Fig3 => (leloup, leloup_identify()),
        _ => (population, population_identify()),
    };
    let control = match figure {
        Figure::Fig3 => Some(ControlConfig {
            coefficients: opts.coefficients,
            cache_dir: opts.cache_dir.clone(),
            ..ControlConfig::default()
        }),
        Figure::Fig6 => Some(ControlConfig {
            task: TaskConfig::Phaseless { k: 1.0 },
            horizon: 240,
            input_min: 0.0,
            input_max: 0.04,
            mode: Mode::RecedingHorizon,
            nu: 0.005,
            control_start: 100.0,
            duration: 340.0,
            coefficients: opts.coefficients,
            cache_dir: opts.cache_dir.clone(),
            ..ControlConfig::default()
        }),
        Figure::Fig5 => Some(ControlConfig {
            coefficients: opts.coefficients,
            ..ControlConfig::default()
        }),
        _ => None,
    };
    let mut cfg = ExperimentConfig {
        output_dir: opts.output_dir.clone(),
        seed: opts.seed,
        section: None,
        initial_state: None,
        simulate: Default::default(),
        identify,
        control,
        curves: Default::default(),
        model,
    };
    if figure == Figure::Fig5 {
        cfg.simulate.input = Some(OPEN_LOOP_INPUT.into());
        cfg.simulate.duration = 200.0;
        cfg.simulate.transient = 1000.0;
    }
    cfg.section = Some(cfg.section());
    cfg
}

fn coefficient_checks(c: &HopfCoefficients, target: [f64; 5], rel: f64, phi_tol: f64) -> Vec<Check> {
    vec![
        Check::relative("alpha", c.alpha, target[0], rel),
        Check::relative("beta", c.beta, target[1], rel),
        Check::relative("a", c.a, target[2], rel),
        Check::relative("b", c.b, target[3], rel),
        Check::angle("phi", c.phi, target[4], phi_tol),
    ]
}

pub fn reproduce(figure: Figure, opts: &PresetOptions) -> Result<Outcome> {
    let cfg = preset_config(figure, opts);
    cfg.validate()?;
    match figure {
        Figure::Fig2 => {
            let dir = run::prepare(&cfg)?;
            let mut out = Outcome::default();
            let id = run::run_identification(&cfg, &dir, &mut out.report)?;
            out.checks = coefficient_checks(&id.coeffs, LELOUP_TARGET, 0.2, 0.15);
            let curves = ExperimentConfig {
                output_dir: dir.join("curves"),
                ..cfg
            };
            run::curves_command(&curves)?;
            out.finish(&dir)?;
            Ok(out)
        }
        Figure::Fig3 => {
            let (mut out, rec, _) = run::control_command(&cfg)?;
            out.checks.push(match rec.realized_shift {
                Some(s) => Check::absolute("realized_shift", s, 11.3, 1.0),
                None => Check {
                    name: "realized_shift".into(),
                    passed: false,
                    detail: "no paired crossings".into(),
                },
            });
            out.finish(&cfg.output_dir)?;
            Ok(out)
        }
        Figure::Fig4 => {
            let dir = run::prepare(&cfg)?;
            let mut out = Outcome::default();
            let id = run::run_identification(&cfg, &dir, &mut out.report)?;
            out.checks.push(Check::absolute("period", id.period.mean, POPULATION_PERIOD, 0.3));
            out.checks.push(Check::absolute("alpha", id.coeffs.alpha, POPULATION_TARGET[0], 0.002));
            out.checks
                .extend(coefficient_checks(&id.coeffs, POPULATION_TARGET, 0.3, 0.3).into_iter().skip(1));
            out.finish(&dir)?;
            Ok(out)
        }
        Figure::Fig5 => {
            let dir = run::prepare(&cfg)?;
            let mut out = Outcome::default();
            let ctl = cfg.control.clone().context("fig5 preset has no control settings")?;
            let coeffs = match ctl.coefficients {
                Some(c) => c,
                None => run::run_identification(&cfg, &dir, &mut out.report)?.coeffs,
            };
            let map = run::output_map(&cfg, &ctl, &coeffs, &mut out.report, &dir)?;
            let input = InputSchedule::parse(OPEN_LOOP_INPUT).map_err(anyhow::Error::msg)?;
            let rms = run::open_loop_comparison(
                &cfg,
                &coeffs,
                &map,
                &input,
                cfg.simulate.duration,
                cfg.simulate.transient,
                &dir,
                &mut out.report,
            )?;
            out.checks.push(Check::upper("crossing_rms", rms, 1.5));
            out.finish(&dir)?;
            Ok(out)
        }
        Figure::Fig6 => {
            let (mut out, _, _) = run::control_command(&cfg)?;
            let mean = out
                .report
                .get("mean_norm_over_r0")
                .and_then(|v| v.parse::<f64>().ok())
                .unwrap_or(f64::INFINITY);
            out.checks.push(Check::upper("mean_norm_over_r0", mean, 0.2));
            out.finish(&cfg.output_dir)?;
            Ok(out)
        }
    }
}
