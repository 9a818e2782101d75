//! TOML scenario files.
//!
//! ```toml
//! name = "oscillator_pf_rk4_ref"
//! filter = "pf"            # mmkf | ekf | enkf | pf | bma
//! seed = 7
//! duration = 15.0          # run over [t0, t0 + duration]
//! step = 0.3               # assimilation grid spacing
//! ensemble_size = 1000     # enkf and pf
//! reference = "rk4"        # pf: id of the reference model
//!
//! [system]
//! kind = "oscillator"      # or "infiltration" with an optional [system.soil] table
//!
//! [truth]
//! source = "exact"         # exact | table (path = "...") | surrogate
//!
//! [observations]
//! every = 0.6
//! variance = 0.01
//!
//! [initial]
//! variance = 0.01
//!
//! [[models]]
//! id = "cn"
//! kind = "cn"              # cn | rk4 | green-ampt | parlange
//! dt = 0.3
//! w = 2.0
//! pollution = 0.1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infiltration::{InfiltrationModel, SoilParams, DEFAULT_T0};
use crate::oscillator::{whole_multiple, OscillatorParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Mmkf,
    Ekf,
    Enkf,
    Pf,
    Bma,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mmkf => "mmkf",
            Self::Ekf => "ekf",
            Self::Enkf => "enkf",
            Self::Pf => "pf",
            Self::Bma => "bma",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mmkf" => Ok(Self::Mmkf),
            "ekf" => Ok(Self::Ekf),
            "enkf" => Ok(Self::Enkf),
            "pf" => Ok(Self::Pf),
            "bma" => Ok(Self::Bma),
            other => Err(Error::config(format!("unknown filter '{other}' (expected mmkf, ekf, enkf, pf or bma)"))),
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Self::Enkf | Self::Pf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    Oscillator {
        #[serde(default = "default_w")]
        w: f64,
        #[serde(default = "one")]
        y0: f64,
        #[serde(default = "one")]
        y0p: f64,
    },
    Infiltration {
        #[serde(default)]
        soil: SoilParams,
        #[serde(default = "default_t0")]
        t0: f64,
    },
}

fn default_w() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

fn default_t0() -> f64 {
    DEFAULT_T0
}

impl SystemSpec {
    pub fn t0(&self) -> f64 {
        match self {
            Self::Oscillator { .. } => 0.0,
            Self::Infiltration { t0, .. } => *t0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Oscillator { .. } => 2,
            Self::Infiltration { .. } => 1,
        }
    }

    pub fn column_labels(&self) -> Vec<&'static str> {
        match self {
            Self::Oscillator { .. } => vec!["y", "yprime"],
            Self::Infiltration { .. } => vec!["i"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Closed-form oscillator solution.
    Exact,
    /// CSV file, `t_min,i_cm_per_min` or `t,y,yprime`; relative paths are
    /// taken from the scenario file's directory.
    Table { path: PathBuf },
    /// An infiltration model on a fine grid with rescaled `K_s` and `α`.
    Surrogate {
        #[serde(default = "parlange")]
        model: InfiltrationModel,
        #[serde(default = "one")]
        ks_scale: f64,
        #[serde(default = "one")]
        alpha_scale: f64,
        #[serde(default = "fine_dt")]
        dt: f64,
    },
}

fn parlange() -> InfiltrationModel {
    InfiltrationModel::Parlange
}

fn fine_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub every: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub variance: f64,
    /// Defaults to the truth at `t0`.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cn,
    Rk4,
    #[serde(alias = "green_ampt")]
    GreenAmpt,
    Parlange,
}

impl ModelKind {
    pub fn infiltration(self) -> Option<InfiltrationModel> {
        match self {
            Self::GreenAmpt => Some(InfiltrationModel::GreenAmpt),
            Self::Parlange => Some(InfiltrationModel::Parlange),
            Self::Cn | Self::Rk4 => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// `variance` as given.
    Fixed,
    /// Mean squared deviation of the free run from the truth.
    White,
    /// Squared deviation at every step.
    TimeDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpec {
    pub mode: ErrorMode,
    #[serde(default)]
    pub variance: Option<f64>,
    /// Calibration window `[t_a, t_b]`; the whole run by default.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    /// Lower bound applied to calibrated variances.
    #[serde(default)]
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub kind: ModelKind,
    /// Integrator step.
    pub dt: f64,
    /// Oscillator frequency.
    #[serde(default)]
    pub w: Option<f64>,
    /// Oscillator noise variance added after every integrator step.
    #[serde(default)]
    pub pollution: Option<f64>,
    /// Infiltration model error.
    #[serde(default)]
    pub error: Option<ErrorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub samples: usize,
    pub particles: usize,
    pub t_eval: f64,
    #[serde(default = "mc_dt")]
    pub dt: f64,
    #[serde(default = "mc_bins")]
    pub bins: usize,
}

fn mc_dt() -> f64 {
    1e-2
}

fn mc_bins() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub filter: FilterKind,
    #[serde(default)]
    pub seed: u64,
    pub duration: f64,
    pub step: f64,
    #[serde(default)]
    pub ensemble_size: Option<usize>,
    #[serde(default)]
    pub reference: Option<String>,
    pub system: SystemSpec,
    pub truth: TruthSpec,
    /// Absent for runs without data.
    #[serde(default)]
    pub observations: Option<ObservationSpec>,
    pub initial: InitialSpec,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloSpec>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::config(format!("invalid scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut s = Self::from_toml_str(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenarios serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("a scenario needs at least one model"));
        }
        if !(self.step > 0.0) || !(self.duration > 0.0) {
            return Err(Error::config("step and duration must be positive"));
        }
        self.steps()?;
        self.observation_stride()?;
        if let Some(o) = &self.observations {
            if !(o.variance >= 0.0) {
                return Err(Error::config("observation variance must be non-negative"));
            }
        }
        if !(self.initial.variance >= 0.0) {
            return Err(Error::config("initial variance must be non-negative"));
        }
        if let Some(mean) = &self.initial.mean {
            if mean.len() != self.system.dim() {
                return Err(Error::config(format!("initial mean needs {} entries", self.system.dim())));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for m in &self.models {
            if !ids.insert(m.id.as_str()) {
                return Err(Error::config(format!("duplicate model id '{}'", m.id)));
            }
            if m.id.is_empty() || !m.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::config(format!("model id '{}' must be alphanumeric", m.id)));
            }
            match (&self.system, m.kind.infiltration()) {
                (SystemSpec::Oscillator { .. }, None) => {
                    if m.w.is_none() || m.pollution.is_none() {
                        return Err(Error::config(format!("oscillator model '{}' needs w and pollution", m.id)));
                    }
                    whole_multiple(self.step, m.dt)
                        .map_err(|_| Error::config(format!("model '{}': step {} is not a multiple of dt {}", m.id, self.step, m.dt)))?;
                }
                (SystemSpec::Infiltration { .. }, Some(_)) => {
                    whole_multiple(self.step, m.dt)
                        .map_err(|_| Error::config(format!("model '{}': step {} is not a multiple of dt {}", m.id, self.step, m.dt)))?;
                    match &m.error {
                        None => return Err(Error::config(format!("infiltration model '{}' needs an [models.error] table", m.id))),
                        Some(e) if e.mode == ErrorMode::Fixed && e.variance.is_none() => {
                            return Err(Error::config(format!("model '{}': fixed error needs a variance", m.id)))
                        }
                        _ => {}
                    }
                }
                _ => {
                    return Err(Error::config(format!("model '{}' does not belong to this system", m.id)));
                }
            }
        }
        match (&self.system, &self.truth) {
            (SystemSpec::Infiltration { .. }, TruthSpec::Exact) => {
                return Err(Error::config("exact truth is only available for the oscillator"));
            }
            (SystemSpec::Oscillator { .. }, TruthSpec::Surrogate { .. }) => {
                return Err(Error::config("surrogate truth is only available for infiltration"));
            }
            _ => {}
        }
        if let SystemSpec::Oscillator { w, y0, y0p } = self.system {
            OscillatorParams::new(w, y0, y0p)?;
        }
        if let SystemSpec::Infiltration { soil, t0 } = &self.system {
            soil.validate()?;
            if !(*t0 > 0.0) {
                return Err(Error::config("infiltration t0 must be positive"));
            }
        }
        if self.filter.is_ensemble() || self.monte_carlo.is_some() {
            match self.ensemble_size {
                Some(n) if n >= 2 => {}
                _ if self.monte_carlo.is_some() => {}
                _ => return Err(Error::config("ensemble filters need ensemble_size >= 2")),
            }
        }
        if self.filter == FilterKind::Pf {
            self.reference_index()?;
        }
        if let Some(mc) = &self.monte_carlo {
            if mc.samples < 1 || mc.particles < 2 || mc.particles > mc.samples || !(mc.t_eval > self.system.t0()) {
                return Err(Error::config(
                    "monte_carlo needs samples >= particles >= 2 and t_eval after t0",
                ));
            }
        }
        Ok(())
    }

    /// Number of assimilation steps after `t0`.
    pub fn steps(&self) -> Result<usize> {
        whole_multiple(self.duration, self.step)
            .map_err(|_| Error::config(format!("duration {} is not a multiple of step {}", self.duration, self.step)))
    }

    /// Assimilation steps between observations, `None` without data.
    pub fn observation_stride(&self) -> Result<Option<usize>> {
        let Some(o) = &self.observations else {
            return Ok(None);
        };
        whole_multiple(o.every, self.step)
            .map(Some)
            .map_err(|_| Error::config(format!("observation cadence {} is not a multiple of step {}", o.every, self.step)))
    }

    /// The `[observations]` table, for operations that need data.
    pub fn require_observations(&self) -> Result<&ObservationSpec> {
        self.observations
            .as_ref()
            .ok_or_else(|| Error::config(format!("scenario '{}' has no [observations] table", self.name)))
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        let t0 = self.system.t0();
        Ok((0..=self.steps()?).map(|k| t0 + k as f64 * self.step).collect())
    }

    pub fn model_index(&self, id: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| Error::config(format!("no model with id '{id}'")))
    }

    pub fn reference_index(&self) -> Result<usize> {
        match &self.reference {
            Some(id) => self.model_index(id),
            None => Err(Error::config("the particle filter needs a reference model id")),
        }
    }

    pub fn ensemble_size(&self) -> Result<usize> {
        self.ensemble_size
            .filter(|&n| n >= 2)
            .ok_or_else(|| Error::config("ensemble_size must be at least 2"))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OSC: &str = r#"
name = "osc"
filter = "pf"
seed = 3
duration = 15.0
step = 0.3
ensemble_size = 100
reference = "rk4"

[system]
kind = "oscillator"

[truth]
source = "exact"

[observations]
every = 0.6
variance = 0.01

[initial]
variance = 0.01

[[models]]
id = "cn"
kind = "cn"
dt = 0.3
w = 2.0
pollution = 0.1

[[models]]
id = "rk4"
kind = "rk4"
dt = 0.02
w = 2.1
pollution = 0.1
"#;

    #[test]
    fn parses_and_derives_grid() {
        let s = Scenario::from_toml_str(OSC).unwrap();
        assert_eq!(s.steps().unwrap(), 50);
        assert_eq!(s.observation_stride().unwrap(), Some(2));
        assert_eq!(s.reference_index().unwrap(), 1);
        assert_eq!(s.times().unwrap().len(), 51);
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_cadence_and_unknown_fields() {
        let bad = OSC.replace("every = 0.6", "every = 0.45");
        assert!(matches!(Scenario::from_toml_str(&bad), Err(Error::Config(_))));
        let bad = OSC.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(Scenario::from_toml_str(&bad).is_err());
        let bad = OSC.replace("reference = \"rk4\"", "reference = \"nope\"");
        assert!(Scenario::from_toml_str(&bad).is_err());
        let bad = OSC.replace("ensemble_size = 100", "ensemble_size = 1");
        assert!(Scenario::from_toml_str(&bad).is_err());
        let bad = OSC.replace("kind = \"rk4\"", "kind = \"parlange\"");
        assert!(Scenario::from_toml_str(&bad).is_err());
    }

    #[test]
    fn filter_names_round_trip() {
        for f in [FilterKind::Mmkf, FilterKind::Ekf, FilterKind::Enkf, FilterKind::Pf, FilterKind::Bma] {
            assert_eq!(FilterKind::parse(f.name()).unwrap(), f);
        }
        assert!(FilterKind::parse("ukf").is_err());
    }
}
