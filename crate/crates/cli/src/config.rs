//! Campaign configuration file.
//!
//! One TOML file holds every section; all fields have defaults, so an empty
//! file is a valid configuration. Validation errors name the offending field
//! as a dotted path.

use std::fmt;
use std::path::{Path, PathBuf};

use marginscope::controller::ControllerConfig;
use marginscope::energy::{EnergyError, EnergyGrid};
use marginscope::model::CalibrationTargets;
use marginscope::sweep::{SweepError, SweepPlan};
use marginscope::DeviceModelParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted field path, or the file the problem concerns.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { path: path.into(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Where the device model comes from. With nothing set, the default
/// calibration targets are used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub targets: Option<CalibrationTargets>,
    /// Calibration targets in a separate TOML file, relative to the config.
    pub targets_file: Option<PathBuf>,
    /// Fixed model parameters; skips calibration.
    pub params: Option<DeviceModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlRun {
    pub episodes: u32,
    pub duration_windows: u32,
}

impl Default for ControlRun {
    fn default() -> Self {
        Self { episodes: 100, duration_windows: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign_seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub sweep: SweepPlan,
    pub energy: EnergyGrid,
    pub controller: ControllerConfig,
    pub control: ControlRun,
    /// Directory relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            campaign_seed: 1,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            sweep: SweepPlan::default(),
            energy: EnergyGrid::default(),
            controller: ControllerConfig::default(),
            control: ControlRun::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl CampaignConfig {
    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("<config>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { "<config>".to_string() } else { path }, e.inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let sources = [m.targets.is_some(), m.targets_file.is_some(), m.params.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(ConfigError::new("model", "set at most one of targets, targets_file, params"));
        }
        if let Some(t) = &m.targets {
            t.validate().map_err(|e| ConfigError::new("model.targets", e))?;
        }
        if let Some(p) = &m.params {
            p.validate().map_err(|e| ConfigError::new("model.params", e))?;
        }
        self.sweep.validate().map_err(|e| match e {
            SweepError::EmptyPlan(field) => ConfigError::new(format!("sweep.{field}"), "must not be empty"),
            other => ConfigError::new("sweep", other),
        })?;
        self.energy.validate().map_err(|e| match e {
            EnergyError::EmptyGrid(field) => ConfigError::new(format!("energy.{field}"), "must not be empty"),
            other => ConfigError::new("energy", other),
        })?;
        self.controller.validate().map_err(|e| ConfigError::new("controller", e))?;
        if self.control.episodes == 0 {
            return Err(ConfigError::new("control.episodes", "must be at least 1"));
        }
        if self.control.duration_windows == 0 {
            return Err(ConfigError::new("control.duration_windows", "must be at least 1"));
        }
        Ok(())
    }

    /// Calibration targets named by the model section, if it names any.
    pub fn resolve_targets(&self) -> Result<Option<CalibrationTargets>, ConfigError> {
        match (&self.model.targets, &self.model.targets_file, &self.model.params) {
            (Some(t), _, _) => Ok(Some(t.clone())),
            (_, Some(file), _) => {
                let path = self.base_dir.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::new("model.targets_file", format!("{}: {e}", path.display())))?;
                let targets: CalibrationTargets =
                    toml::from_str(&text).map_err(|e| ConfigError::new("model.targets_file", e.message()))?;
                targets.validate().map_err(|e| ConfigError::new("model.targets_file", e))?;
                Ok(Some(targets))
            }
            (_, _, Some(_)) => Ok(None),
            (None, None, None) => Ok(Some(CalibrationTargets::default())),
        }
    }

    /// SHA-256 over the canonical serialization of the settings that shape
    /// results. The output directory and campaign seed are excluded; the
    /// seed is recorded separately.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.campaign_seed = 0;
        if canonical.model.targets_file.take().is_some() {
            // Hash the referenced targets, not the path.
            canonical.model.targets = self.resolve_targets().ok().flatten();
        }
        let text = toml::to_string(&canonical).unwrap_or_else(|e| format!("unserializable config: {e}"));
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(CampaignConfig::from_toml("").unwrap(), CampaignConfig::default());
    }

    #[test]
    fn errors_name_field_paths() {
        let e = CampaignConfig::from_toml("[sweep]\nvoltages_mv = [1025]\n").unwrap_err();
        assert_eq!(e.path, "sweep");
        let e = CampaignConfig::from_toml("[sweep]\nvoltages_mv = []\n").unwrap_err();
        assert_eq!(e.path, "sweep.voltages_mv");
        let e = CampaignConfig::from_toml("[energy]\nvoltages_mv = []\n").unwrap_err();
        assert_eq!(e.path, "energy.voltages_mv");
        let e = CampaignConfig::from_toml("[sweep]\nrepetitions = \"ten\"\n").unwrap_err();
        assert_eq!(e.path, "sweep.repetitions");
        let e = CampaignConfig::from_toml("[controller]\nbogus = 1\n").unwrap_err();
        assert_eq!(e.path, "controller.bogus");
        let e = CampaignConfig::from_toml("[controller]\nerror_rate_lo = 0.5\n").unwrap_err();
        assert_eq!(e.path, "controller");
        let e = CampaignConfig::from_toml("[model.targets]\nw_err_khz = -1.0\n").unwrap_err();
        assert_eq!(e.path, "model.targets");
    }

    #[test]
    fn missing_targets_file_names_the_field() {
        let mut cfg = CampaignConfig::from_toml("[model]\ntargets_file = \"nope.toml\"\n").unwrap();
        cfg.base_dir = std::env::temp_dir();
        assert_eq!(cfg.resolve_targets().unwrap_err().path, "model.targets_file");
    }

    #[test]
    fn hash_ignores_output_dir_and_seed() {
        let a = CampaignConfig::default();
        let b = CampaignConfig { output_dir: "elsewhere".into(), campaign_seed: 99, ..CampaignConfig::default() };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let mut c = CampaignConfig::default();
        c.sweep.repetitions = 3;
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
