//! Experiment configuration: one TOML document per run.

use std::fs;
use std::path::{Path, PathBuf};

use hopfid::control::{InputCost, Mode, StateGridSpec};
use hopfid::estimator::DifferenceScheme;
use hopfid::ident::IdentifyConfig;
use hopfid::models::leloup::STATE_NAMES;
use hopfid::{
    HopfCoefficients, HopfField, LeloupField, LeloupParameters, LinearOutput, PopulationField,
    PopulationParameters, Section, VectorField,
};
use serde::{Deserialize, Serialize};

/// Configuration problems, reported before anything runs.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    /// Defaults to the model's standard section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<Section>,
    /// Defaults to the model's standard initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub curves: CurvesConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Hopf {
        coefficients: HopfCoefficients,
        #[serde(default)]
        output: LinearOutput,
    },
    Leloup {
        #[serde(default)]
        parameters: LeloupParameters,
        /// Observed state variable.
        #[serde(default = "default_leloup_output")]
        output: String,
    },
    Population {
        #[serde(default)]
        parameters: PopulationParameters,
    },
}

fn default_leloup_output() -> String {
    "MP".into()
}

/// A model instantiated from its configuration.
pub type BoxedField = Box<dyn VectorField + Send + Sync>;

impl ModelConfig {
    pub fn build(&self) -> Result<BoxedField, ConfigError> {
        let invalid = |e: hopfid::Error| ConfigError::Invalid(e.to_string());
        Ok(match self {
            ModelConfig::Hopf {
                coefficients,
                output,
            } => {
                coefficients.validate().map_err(invalid)?;
                Box::new(HopfField::new(*coefficients, *output))
            }
            ModelConfig::Leloup { parameters, output } => {
                let index = STATE_NAMES.iter().position(|n| n == output).ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "unknown Leloup output `{output}`; expected one of {}",
                        STATE_NAMES.join(", ")
                    ))
                })?;
                Box::new(LeloupField::new(*parameters).and_then(|f| f.with_output(index)).map_err(invalid)?)
            }
            ModelConfig::Population { parameters } => {
                Box::new(PopulationField::new(*parameters).map_err(invalid)?)
            }
        })
    }

    pub fn default_section(&self) -> Section {
        match self {
            ModelConfig::Hopf { output, .. } => Section::rising(output.c0),
            ModelConfig::Leloup { .. } => Section::rising(1.37),
            ModelConfig::Population { .. } => Section::rising(0.044),
        }
    }

    pub fn default_initial_state(&self) -> Vec<f64> {
        match self {
            ModelConfig::Hopf { coefficients, .. } => coefficients.orbit_point(0.0).to_vec(),
            ModelConfig::Leloup { .. } => LeloupField::initial_state().to_vec(),
            ModelConfig::Population { parameters } => vec![0.1; 4 * parameters.n_oscillators],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Hopf { .. } => "hopf",
            ModelConfig::Leloup { .. } => "leloup",
            ModelConfig::Population { .. } => "population",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Recorded length after the transient (h).
    pub duration: f64,
    pub dt: f64,
    pub transient: f64,
    /// Rows are written every `sample_interval`.
    pub sample_interval: f64,
    /// Input as a function of `t` (time since the end of the transient),
    /// e.g. `max(0.02*sin(0.24*t), 0)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            duration: 200.0,
            dt: 1e-2,
            transient: 0.0,
            sample_interval: 0.1,
            input: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    pub dt: f64,
    pub grid_points: usize,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            grid_points: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Reach the orbit `advance` hours ahead of the unforced phase.
    PhaseShift { k: f64, advance: f64 },
    /// Drive the state toward the fixed point inside the orbit.
    Phaseless { k: f64 },
    /// No state cost; the optimal input is zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub task: TaskConfig,
    pub dt: f64,
    pub horizon: usize,
    pub input_min: f64,
    pub input_max: f64,
    pub input_levels: usize,
    pub grid: StateGridSpec,
    pub mode: Mode,
    pub input_cost: InputCost,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_of_grid_penalty: Option<f64>,
    pub nu: f64,
    pub ydot: DifferenceScheme,
    pub plant_dt: f64,
    pub transient: f64,
    /// Length of the closed-loop run after the anchoring crossing (h).
    pub duration: f64,
    /// Controller switch-on time after the anchoring crossing (h).
    pub control_start: f64,
    /// Cycles averaged for the output map of noisy plants.
    pub profile_cycles: usize,
    /// Use these coefficients instead of identifying the model first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<HopfCoefficients>,
    /// Defaults to `<output_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::PhaseShift {
                k: 1.0 / 50.0,
                advance: 12.0,
            },
            dt: 0.1,
            horizon: 1200,
            input_min: -0.2,
            input_max: 0.2,
            input_levels: 41,
            grid: StateGridSpec::default(),
            mode: Mode::FiniteHorizon,
            input_cost: InputCost::Quadratic,
            out_of_grid_penalty: None,
            nu: 0.02,
            ydot: DifferenceScheme::Backward2,
            plant_dt: 1e-2,
            transient: 1000.0,
            duration: 240.0,
            control_start: 0.0,
            profile_cycles: 50,
            coefficients: None,
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn section(&self) -> Section {
        self.section.unwrap_or_else(|| self.model.default_section())
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.initial_state
            .clone()
            .unwrap_or_else(|| self.model.default_initial_state())
    }

    /// Copy with every defaulted field written out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.section = Some(self.section());
        r.identify.seed = self.seed;
        r
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let field = self.model.build()?;
        if let Some(x0) = &self.initial_state {
            if x0.len() != field.dim() {
                return bad(format!(
                    "initial_state has {} entries but the {} model has {} states",
                    x0.len(),
                    self.model.name(),
                    field.dim()
                ));
            }
        }
        let s = &self.simulate;
        if !(s.dt > 0.0 && s.sample_interval >= s.dt && s.duration > 0.0 && s.transient >= 0.0) {
            return bad("simulate: need dt > 0, sample_interval >= dt, duration > 0, transient >= 0".into());
        }
        if let Some(expr) = &s.input {
            crate::input::InputSchedule::parse(expr).map_err(|e| ConfigError::Invalid(format!("simulate.input: {e}")))?;
        }
        self.identify
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("identify: {e}")))?;
        if !(self.curves.dt > 0.0 && self.curves.grid_points >= 8) {
            return bad("curves: need dt > 0 and at least 8 grid points".into());
        }
        if let Some(c) = &self.control {
            if !(c.input_min <= c.input_max) || c.input_levels == 0 {
                return bad("control: need input_min <= input_max and at least one input level".into());
            }
            if !(c.nu > 0.0 && c.nu <= 1.0) {
                return bad(format!("control: nu must lie in (0, 1], got {}", c.nu));
            }
            if !(c.plant_dt > 0.0 && c.plant_dt <= c.dt) {
                return bad("control: need 0 < plant_dt <= dt".into());
            }
            if !(c.duration > 0.0 && c.control_start >= 0.0 && c.control_start < c.duration) {
                return bad("control: need duration > 0 and 0 <= control_start < duration".into());
            }
            if let TaskConfig::PhaseShift { k, .. } | TaskConfig::Phaseless { k } = c.task {
                if !(k > 0.0) {
                    return bad(format!("control.task: k must be positive, got {k}"));
                }
            }
            if let Some(coeffs) = &c.coefficients {
                coeffs
                    .validate()
                    .map_err(|e| ConfigError::Invalid(format!("control.coefficients: {e}")))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_hopf_config() {
        let text = r#"
            [model]
            kind = "hopf"
            coefficients = { alpha = 1.0, beta = 1.0, a = -1.0, b = 0.0 }
        "#;
        let cfg = ExperimentConfig::from_toml(text, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.section(), Section::rising(0.0));
        assert_eq!(cfg.initial_state(), vec![1.0, 0.0]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = "seed = 1\n[model]\nkind = \"leloup\"\nbogus = 3\n";
        let err = ExperimentConfig::from_toml(text, Path::new("t.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line 2") || msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "[model]\nkind = \"leloup\"\n[control]\nhorizon = 10\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("t.toml")).unwrap();
        let echoed = toml::to_string_pretty(&cfg.resolved()).unwrap();
        let again = ExperimentConfig::from_toml(&echoed, Path::new("echo.toml")).unwrap();
        assert_eq!(again, cfg.resolved());
    }

    #[test]
    fn state_count_is_checked() {
        let text = "initial_state = [1.0]\n[model]\nkind = \"leloup\"\n";
        assert!(matches!(
            ExperimentConfig::from_toml(text, Path::new("t.toml")),
            Err(ConfigError::Invalid(_))
        ));
    }
}
