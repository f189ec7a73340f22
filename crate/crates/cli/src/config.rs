//! Run configuration: one TOML file with a section per module.
//!
//! Precedence is flag > file > default. Unknown keys anywhere are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uavtwin::channel::RadioConfig;
use uavtwin::env::{EnvConfig, EnvParams, Environment};
use uavtwin::ledger::sim::SimParams;
use uavtwin::ppo::PpoHyperparams;
use uavtwin::scene::{generate_urban_grid, read_scene, Scene, UrbanGridParams};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Render `sinr.svg` and `capacity.svg` after training.
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plots: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run seed. Overrides `ppo.seed` and drives the ledger simulation.
    pub seed: Option<u64>,
    /// Load the scene from this file instead of generating it from `[scene]`.
    pub scene_file: Option<PathBuf>,
    pub scene: UrbanGridParams,
    pub radio: RadioConfig,
    pub env: EnvParams,
    pub ppo: PpoHyperparams,
    pub ledger: SimParams,
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` if given, else defaults, then applies `overrides`.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run_seed(&self) -> u64 {
        self.seed.unwrap_or(self.ppo.seed)
    }

    /// PPO hyperparameters with the run seed applied.
    pub fn ppo_params(&self) -> PpoHyperparams {
        PpoHyperparams {
            seed: self.run_seed(),
            ..self.ppo.clone()
        }
    }

    /// Every problem across sections, checked before any work starts.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let section = |name: &'static str, items: Vec<String>| items.into_iter().map(move |p| format!("[{name}] {p}"));
        if self.scene_file.is_none() {
            out.extend(section("scene", self.scene.problems()));
        }
        out.extend(section("radio", self.radio.problems()));
        out.extend(section("ppo", self.ppo_params().problems()));
        out.extend(section("ledger", self.ledger.problems()));
        if !(self.env.step_size > 0.0) {
            out.push(format!("[env] step_size must be > 0 (got {})", self.env.step_size));
        }
        if self.env.episode_length < 1 {
            out.push("[env] episode_length must be >= 1".into());
        }
        if !(self.env.start_jitter >= 0.0) {
            out.push("[env] start_jitter must be >= 0".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn build_scene(&self) -> Result<Scene> {
        match &self.scene_file {
            Some(path) => read_scene(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
            None => generate_urban_grid(&self.scene).map_err(|e| CliError::Config(e.to_string())),
        }
    }

    pub fn build_env(&self) -> Result<Environment> {
        self.validate()?;
        let scene = self.build_scene()?;
        Environment::new(EnvConfig::new(scene, self.radio.clone(), self.env.clone()))
            .map_err(|e| CliError::Config(e.to_string()))
    }
}
