//! Versioned TOML configuration.
//!
//! Every section is optional and every key inside a section defaults
//! individually; unknown keys are errors. `version` is mandatory.
//!
//! ```toml
//! version = 1
//! seed = 42
//!
//! [noise]
//! pair_rate = 1e6
//! car = 3.0            # or inf
//! dark_rate = 2e-4
//! gate_rate = 5e7
//! eta = 0.07
//! systematic_angle = 0.0
//!
//! [timing]
//! name = "polarimeter"
//! m = 9
//! tau_m = 0.08
//! tau_s = 0.02
//! tau_a = 0.001
//! pair_rate = 1e6
//! eta = 0.07
//!
//! [source]
//! theta = 0.0
//! car = 3.0
//! pair_rate = 1e6
//! depolarization = 0.0
//!
//! [engine]
//! window_m = 9
//! pacing = "realtime"   # or "fast"
//! order = "canonical"   # or "shuffled"
//! target = "source"
//!
//! [reconstruction]
//! method = "lls"
//! subtract_accidentals = true
//! normalize_per_setting = true
//! ml_grad_tol = 1e-7
//! ml_max_iter = 10000
//!
//! [montecarlo]
//! state = "phi+"
//! trials = 500
//! settings = 9
//! n_values = [100.0, 1000.0, 4013.1]
//! profiles = ["polarimeter", "freespace"]
//! t_values = [1.0, 10.0, 60.0]
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, Pacing, SettingOrder, SourceState};
use crate::lab::{StudyOptions, TimingProfile};
use crate::measurement::NoiseModel;
use crate::reconstruction::{LlsOptions, Method, MlOptions};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config is missing `version = {CONFIG_VERSION}`")]
    MissingVersion,
    #[error("unsupported config version {0}; this build reads version {CONFIG_VERSION}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub window_m: usize,
    pub pacing: Pacing,
    pub order: SettingOrder,
    pub target: String,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            window_m: e.window_m,
            pacing: e.pacing,
            order: e.order,
            target: e.target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionSection {
    pub method: Method,
    pub subtract_accidentals: bool,
    pub normalize_per_setting: bool,
    pub ml_grad_tol: f64,
    pub ml_max_iter: usize,
}

impl Default for ReconstructionSection {
    fn default() -> Self {
        let ml = MlOptions::default();
        Self {
            method: Method::Lls,
            subtract_accidentals: true,
            normalize_per_setting: true,
            ml_grad_tol: ml.grad_tol,
            ml_max_iter: ml.max_iter,
        }
    }
}

impl ReconstructionSection {
    pub fn lls(&self) -> LlsOptions {
        LlsOptions {
            subtract_accidentals: self.subtract_accidentals,
            normalize_per_setting: self.normalize_per_setting,
        }
    }

    pub fn ml(&self) -> MlOptions {
        MlOptions {
            subtract_accidentals: self.subtract_accidentals,
            grad_tol: self.ml_grad_tol,
            max_iter: self.ml_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    /// Named ideal state.
    pub state: String,
    pub trials: usize,
    pub settings: usize,
    pub n_values: Vec<f64>,
    pub profiles: Vec<String>,
    pub t_values: Vec<f64>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            state: "phi+".into(),
            trials: 500,
            settings: 9,
            n_values: vec![100.0, 300.0, 1000.0, 4013.1, 16052.4],
            profiles: vec!["polarimeter".into(), "freespace".into()],
            t_values: vec![1.0, 4.0, 10.0, 30.0, 55.0, 60.0, 75.0, 90.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub timing: TimingProfile,
    #[serde(default)]
    pub source: SourceState,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub reconstruction: ReconstructionSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: Some(CONFIG_VERSION),
            seed: None,
            noise: NoiseModel::default(),
            timing: TimingProfile::default(),
            source: SourceState::default(),
            engine: EngineSection::default(),
            reconstruction: ReconstructionSection::default(),
            montecarlo: MonteCarloSection::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        match config.version {
            None => return Err(ConfigError::MissingVersion),
            Some(CONFIG_VERSION) => {}
            Some(v) => return Err(ConfigError::Version(v)),
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.noise.validate().map_err(|e| invalid(e.to_string()))?;
        self.source.validate().map_err(invalid)?;
        self.engine_config(0)
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let r = &self.reconstruction;
        if !(r.ml_grad_tol.is_finite() && r.ml_grad_tol > 0.0) {
            return Err(invalid("reconstruction.ml_grad_tol must be > 0".into()));
        }
        if r.ml_max_iter == 0 {
            return Err(invalid("reconstruction.ml_max_iter must be >= 1".into()));
        }
        let mc = &self.montecarlo;
        if !matches!(mc.settings, 9 | 36) {
            return Err(invalid("montecarlo.settings must be 9 or 36".into()));
        }
        if crate::quantum::PureState2Q::named(&mc.state).is_none() {
            return Err(invalid(format!("montecarlo.state: unknown state {:?}", mc.state)));
        }
        for p in &mc.profiles {
            if TimingProfile::preset(p).is_none() && p != "config" {
                return Err(invalid(format!(
                    "montecarlo.profiles: unknown profile {p:?} (polarimeter, freespace or config)"
                )));
            }
        }
        Ok(())
    }

    /// Engine settings with `seed` substituted.
    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            timing: self.timing.clone(),
            window_m: self.engine.window_m,
            pacing: self.engine.pacing,
            seed,
            noise: self.noise,
            order: self.engine.order,
            lls: self.reconstruction.lls(),
            target: self.engine.target.clone(),
        }
    }

    pub fn study_options(&self) -> StudyOptions {
        StudyOptions {
            settings: self.montecarlo.settings,
            lls: self.reconstruction.lls(),
            ml: self.reconstruction.ml(),
        }
    }

    /// Resolves a profile name; `config` means the `[timing]` section.
    pub fn profile(&self, name: &str) -> Option<TimingProfile> {
        if name == "config" {
            Some(self.timing.clone())
        } else {
            TimingProfile::preset(name)
        }
    }
}
