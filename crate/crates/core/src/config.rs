//! TOML run configuration.
//!
//! ```toml
//! [model]
//! preset = "random_dissipative"
//! m = 1.0
//! lambda_re = -1.0
//! lambda_im = -1.0
//! gamma_re = 0.5
//! gamma_im = 0.0
//!
//! [grid]
//! L = 16.0
//! Nx = 64
//!
//! [init]
//! sigma0 = 1.0
//!
//! [stepper]
//! t_final = 12.0
//! dt = 1e-3
//!
//! [stochastic]
//! seed = 42
//! trajectories = 100
//!
//! [output]
//! output_times = "linspace(13)"
//! ```
//!
//! Unknown keys anywhere are errors, as are preset parameters that the
//! chosen preset does not use.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{init_gaussian_weighted, FieldError, GaussianInit, Grid, WaveFunction};
use crate::model::{build_model, ComplexParam, ModelError, ModelInput, ModelSpec, OperatorTerm};
use crate::montecarlo::{EnsembleConfig, SeMethod};
use crate::operators::StepMode;
use crate::steppers::{Engine, StepperConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("key `{key}` is not used by preset `{preset}`")]
    UnusedKey { key: String, preset: String },
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Custom,
    DeterministicNh,
    RandomDissipative,
}

impl PresetName {
    fn as_str(self) -> &'static str {
        match self {
            PresetName::Custom => "custom",
            PresetName::DeterministicNh => "deterministic_nh",
            PresetName::RandomDissipative => "random_dissipative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKindName {
    Derivative,
    DxX,
    XDx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub kind: TermKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl TermSpec {
    pub fn to_term(&self) -> Result<OperatorTerm, ConfigError> {
        let c = ComplexParam::new(self.re, self.im)?;
        Ok(match self.kind {
            TermKindName::Derivative => OperatorTerm::DerivativePoly {
                order: self.order.ok_or_else(|| ConfigError::MissingKey("order".into()))?,
                coeff: c,
            },
            TermKindName::DxX | TermKindName::XDx if self.order.is_some() => {
                return Err(invalid("order", "only derivative terms take an order"));
            }
            TermKindName::DxX => OperatorTerm::MixedDxX { coeff: c },
            TermKindName::XDx => OperatorTerm::MixedXDx { coeff: c },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: PresetName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1_im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2_re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2_im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1_terms: Option<Vec<TermSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2_terms: Option<Vec<TermSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "Nx")]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default)]
    pub q0: f64,
    #[serde(default)]
    pub p0: f64,
    pub sigma0: f64,
    /// Carry the state as `exp(weight x^2) psi`; 0 evolves `psi` itself.
    /// Defaults to [`RD_WEIGHT`] for the random dissipative preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// Default representation weight of the random dissipative preset. Its
/// drift contains an imaginary-time dilation, which amplifies round-off at
/// large `|x|` unless the carried state is weighted towards the centre.
pub const RD_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    #[default]
    Prenormalized,
    Normalized,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub t_final: f64,
    pub dt: f64,
    #[serde(default)]
    pub mode: StepMode,
    #[serde(default)]
    pub engine: EngineChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_fine: Option<f64>,
    #[serde(default = "one")]
    pub trajectories: usize,
}

fn one() -> usize {
    1
}

/// Either an explicit list or `"linspace(n)"` over `[0, t_final]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutputTimes {
    List(Vec<f64>),
    Spec(String),
}

impl Default for OutputTimes {
    fn default() -> Self {
        OutputTimes::Spec("linspace(11)".into())
    }
}

/// Parsed form of the string variant of [`OutputTimes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linspace(pub usize);

impl FromStr for Linspace {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix("linspace(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| invalid("output_times", format!("expected a list or \"linspace(n)\", got {s:?}")))?;
        let n: usize = inner.trim().parse().map_err(|_| invalid("output_times", format!("bad count in {s:?}")))?;
        if !(2..=1_000_000).contains(&n) {
            return Err(invalid("output_times", format!("linspace count must be in 2..=1000000, got {n}")));
        }
        Ok(Linspace(n))
    }
}

impl OutputTimes {
    pub fn resolve(&self, t_final: f64) -> Result<Vec<f64>, ConfigError> {
        let times = match self {
            OutputTimes::List(v) => v.clone(),
            OutputTimes::Spec(s) => {
                let Linspace(n) = s.parse()?;
                (0..n).map(|j| t_final * j as f64 / (n - 1) as f64).collect()
            }
        };
        if times.is_empty() {
            return Err(invalid("output_times", "no output times"));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0 && **t <= t_final)) {
            return Err(invalid("output_times", format!("{t} is outside [0, {t_final}]")));
        }
        Ok(times)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub output_times: OutputTimes,
    #[serde(default)]
    pub snapshots: bool,
    #[serde(default)]
    pub se_method: SeMethod,
    /// Fit window `[t_lo, t_hi]` for the growth-exponent classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    pub dt_list: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub t: f64,
    pub n_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub init: InitSection,
    pub stepper: StepperSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSection>,
}

fn need(v: Option<f64>, key: &str) -> Result<f64, ConfigError> {
    v.ok_or_else(|| ConfigError::MissingKey(format!("model.{key}")))
}

fn positive(v: f64, key: &str) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be finite and positive, got {v}")))
    }
}

impl ModelSection {
    fn present_keys(&self) -> Vec<(&'static str, bool)> {
        vec![
            ("m", self.m.is_some()),
            ("lambda_re", self.lambda_re.is_some()),
            ("lambda_im", self.lambda_im.is_some()),
            ("gamma_re", self.gamma_re.is_some()),
            ("gamma_im", self.gamma_im.is_some()),
            ("lambda1_re", self.lambda1_re.is_some()),
            ("lambda1_im", self.lambda1_im.is_some()),
            ("lambda2_re", self.lambda2_re.is_some()),
            ("lambda2_im", self.lambda2_im.is_some()),
            ("h1_terms", self.h1_terms.is_some()),
            ("h2_terms", self.h2_terms.is_some()),
        ]
    }

    pub fn to_input(&self) -> Result<ModelInput, ConfigError> {
        let allowed: &[&str] = match self.preset {
            PresetName::Custom => &["h1_terms", "h2_terms"],
            PresetName::DeterministicNh => &["lambda1_re", "lambda1_im", "lambda2_re", "lambda2_im"],
            PresetName::RandomDissipative => &["m", "lambda_re", "lambda_im", "gamma_re", "gamma_im"],
        };
        for (key, present) in self.present_keys() {
            if present && !allowed.contains(&key) {
                return Err(ConfigError::UnusedKey { key: format!("model.{key}"), preset: self.preset.as_str().into() });
            }
        }
        Ok(match self.preset {
            PresetName::Custom => {
                let h1 = self.h1_terms.as_ref().ok_or_else(|| ConfigError::MissingKey("model.h1_terms".into()))?;
                let h2 = self.h2_terms.as_deref().unwrap_or(&[]);
                ModelInput::Custom {
                    h1_terms: h1.iter().map(TermSpec::to_term).collect::<Result<_, _>>()?,
                    h2_terms: h2.iter().map(TermSpec::to_term).collect::<Result<_, _>>()?,
                }
            }
            PresetName::DeterministicNh => ModelInput::DeterministicNH {
                lambda1: ComplexParam::new(need(self.lambda1_re, "lambda1_re")?, need(self.lambda1_im, "lambda1_im")?)?,
                lambda2: ComplexParam::new(need(self.lambda2_re, "lambda2_re")?, need(self.lambda2_im, "lambda2_im")?)?,
            },
            PresetName::RandomDissipative => ModelInput::RandomDissipative {
                mass: need(self.m, "m")?,
                lambda: ComplexParam::new(need(self.lambda_re, "lambda_re")?, need(self.lambda_im, "lambda_im")?)?,
                gamma: ComplexParam::new(need(self.gamma_re, "gamma_re")?, need(self.gamma_im, "gamma_im")?)?,
            },
        })
    }
}

impl RunConfig {
    /// Parse and validate everything that does not depend on the subcommand.
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.model_spec()?;
        let grid = self.grid()?;
        crate::field::init_gaussian(&grid, self.gaussian_init())?;
        self.initial_state()?;
        if self.weight() != 0.0 {
            let high = spec.h1_terms.iter().chain(&spec.h2_terms).filter_map(|t| match t {
                OperatorTerm::DerivativePoly { order, .. } if *order > 2 => Some(*order),
                _ => None,
            });
            if let Some(order) = high.max() {
                return Err(invalid("init.weight", format!("derivative order {order} needs weight = 0")));
            }
        }
        let st = &self.stepper;
        positive(st.t_final, "stepper.t_final")?;
        positive(st.dt, "stepper.dt")?;
        let n = (st.t_final / st.dt).round();
        if n < 1.0 || (n * st.dt - st.t_final).abs() > 1e-9 * st.t_final {
            return Err(invalid("stepper.dt", format!("t_final = {} is not a multiple of dt = {}", st.t_final, st.dt)));
        }
        self.output.output_times.resolve(st.t_final)?;
        if let Some(s) = &self.stochastic {
            let f = positive(self.dt_fine(), "stochastic.dt_fine")?;
            let m = (st.dt / f).round();
            if m < 1.0 || (m * f - st.dt).abs() > 1e-9 * st.dt {
                return Err(invalid("stochastic.dt_fine", format!("dt = {} is not a multiple of dt_fine = {f}", st.dt)));
            }
            if s.trajectories == 0 {
                return Err(invalid("stochastic.trajectories", "must be at least 1"));
            }
        }
        if let Some(c) = &self.converge {
            for &d in &c.dt_list {
                positive(d, "converge.dt_list")?;
            }
        }
        if let Some(l) = &self.lattice {
            positive(l.t, "lattice.t")?;
            if l.n_steps == 0 {
                return Err(invalid("lattice.n_steps", "must be at least 1"));
            }
        }
        if let Some([a, b]) = self.output.fit_window {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(invalid("output.fit_window", format!("[{a}, {b}] is not an interval")));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        Ok(build_model(self.model.to_input()?)?)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Ok(Grid::new(self.grid.length, self.grid.points)?)
    }

    pub fn gaussian_init(&self) -> GaussianInit {
        GaussianInit { q0: self.init.q0, p0: self.init.p0, sigma0: self.init.sigma0 }
    }

    /// The Gaussian packet of `[init]` on the configured grid and
    /// representation.
    pub fn initial_state(&self) -> Result<WaveFunction, ConfigError> {
        Ok(init_gaussian_weighted(&self.grid()?, self.gaussian_init(), self.weight())?)
    }

    /// `init.weight`, or the preset default.
    pub fn weight(&self) -> f64 {
        self.init.weight.unwrap_or(match self.model.preset {
            PresetName::RandomDissipative => RD_WEIGHT.min(0.4 / self.init.sigma0.powi(2)),
            _ => 0.0,
        })
    }

    pub fn output_times(&self) -> Result<Vec<f64>, ConfigError> {
        self.output.output_times.resolve(self.stepper.t_final)
    }

    pub fn dt_fine(&self) -> f64 {
        self.stochastic.and_then(|s| s.dt_fine).unwrap_or(self.stepper.dt)
    }

    pub fn seed(&self) -> u64 {
        self.stochastic.map_or(0, |s| s.seed)
    }

    pub fn stepper_config(&self) -> Result<StepperConfig, ConfigError> {
        Ok(StepperConfig {
            dt: self.stepper.dt,
            t_final: self.stepper.t_final,
            mode: self.stepper.mode,
            output_times: self.output_times()?,
            keep_snapshots: self.output.snapshots,
        })
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig, ConfigError> {
        let s = self.stochastic.ok_or_else(|| ConfigError::MissingKey("stochastic".into()))?;
        let engine = match self.stepper.engine {
            EngineChoice::Prenormalized => Engine::Prenormalized,
            EngineChoice::Normalized => Engine::Normalized,
            EngineChoice::Both => return Err(invalid("stepper.engine", "ensembles take a single engine")),
        };
        if s.trajectories < 2 {
            return Err(invalid("stochastic.trajectories", "an ensemble needs at least 2 trajectories"));
        }
        Ok(EnsembleConfig {
            n_traj: s.trajectories,
            master_seed: s.seed,
            dt: self.stepper.dt,
            dt_fine: self.dt_fine(),
            t_final: self.stepper.t_final,
            output_times: self.output_times()?,
            mode: self.stepper.mode,
            engine,
            se_method: self.output.se_method,
        })
    }
}
