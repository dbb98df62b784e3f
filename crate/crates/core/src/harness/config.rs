use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::subject::SubjectSpec;
use crate::error::{Error, Result};
use crate::localization::Selection;
use crate::pso::{FitnessConfig, FitnessVariant, LossRatioOrientation, SwarmConfig};

pub const CONFIG_VERSION: u32 = 1;

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: FitnessVariant,
    pub alpha: f64,
    #[serde(alias = "pi")]
    pub perfect_intact: bool,
    /// Localized set size. Exactly one of `target_lw` and `n_g` must be set.
    #[serde(default)]
    pub target_lw: Option<usize>,
    #[serde(default)]
    pub n_g: Option<usize>,
    pub n_pos: usize,
    pub n_particles: usize,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub orientation: Option<LossRatioOrientation>,
    /// Overrides the swarm section's iteration count.
    #[serde(default)]
    pub n_iterations: Option<usize>,
}

impl RunConfig {
    pub fn selection(&self) -> Result<Selection> {
        match (self.target_lw, self.n_g) {
            (Some(n), None) => Ok(Selection::Count(n)),
            (None, Some(n)) => Ok(Selection::TopN(n)),
            _ => Err(Error::InvalidConfig(
                "grid entry must set exactly one of target_lw and n_g".into(),
            )),
        }
    }

    pub fn fitness(&self) -> FitnessConfig {
        let mut cfg = FitnessConfig::new(self.variant, self.alpha, self.perfect_intact);
        if let Some(beta) = self.beta {
            cfg.beta = beta;
        }
        if let Some(delta) = self.delta {
            cfg.delta = delta;
        }
        if let Some(o) = self.orientation {
            cfg.orientation = o;
        }
        cfg
    }

    pub fn swarm(&self, section: &SwarmSection, seed: u64) -> SwarmConfig {
        SwarmConfig {
            n_particles: self.n_particles,
            n_iterations: self.n_iterations.unwrap_or(section.n_iterations),
            inertia: section.inertia,
            cognitive: section.cognitive,
            social: section.social,
            velocity_clamp: section.velocity_clamp,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.selection()?;
        self.fitness().validate()?;
        if self.n_pos == 0 {
            return Err(Error::InvalidConfig("n_pos must be >= 1".into()));
        }
        SwarmConfig::new(self.n_particles, 0).validate()
    }

    /// Short human-readable name, e.g. `neg/a8/pi/lw32/pos500/p200`.
    pub fn label(&self) -> String {
        let variant = match self.variant {
            FitnessVariant::BothRatios => "both",
            FitnessVariant::NegRatio => "neg",
        };
        let sel = match (self.target_lw, self.n_g) {
            (Some(n), _) => format!("lw{n}"),
            (None, Some(n)) => format!("ng{n}"),
            _ => "lw?".to_string(),
        };
        format!(
            "{variant}/a{}/{}/{sel}/pos{}/p{}",
            self.alpha,
            if self.perfect_intact { "pi" } else { "nopi" },
            self.n_pos,
            self.n_particles
        )
    }
}

/// Swarm coefficients shared by every grid entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmSection {
    pub n_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub velocity_clamp: f64,
}

impl Default for SwarmSection {
    fn default() -> Self {
        let d = SwarmConfig::new(2, 0);
        Self {
            n_iterations: d.n_iterations,
            inertia: d.inertia,
            cognitive: d.cognitive,
            social: d.social,
            velocity_clamp: d.velocity_clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u32,
    pub master_seed: u64,
    #[serde(default = "ExperimentSpec::default_repetitions")]
    pub repetitions: usize,
    pub target_class: usize,
    /// Repair layer; defaults to the last layer.
    #[serde(default)]
    pub layer: Option<usize>,
    pub subject: SubjectSpec,
    #[serde(default)]
    pub swarm: SwarmSection,
    pub grid: Vec<RunConfig>,
}

impl ExperimentSpec {
    pub const DEFAULT_REPETITIONS: usize = 10;

    fn default_repetitions() -> usize {
        Self::DEFAULT_REPETITIONS
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("grid must not be empty".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.grid.len() > u32::MAX as usize || self.repetitions > u32::MAX as usize {
            return Err(Error::InvalidConfig("grid or repetitions too large".into()));
        }
        self.subject.split.validate()?;
        self.subject.training.validate()?;
        for (i, run) in self.grid.iter().enumerate() {
            run.validate()
                .map_err(|e| Error::InvalidConfig(format!("grid entry {i}: {e}")))?;
        }
        Ok(())
    }

    /// Seed of repetition `rep` of grid entry `config`. Injective over the sweep
    /// for a fixed master seed.
    pub fn run_seed(&self, config: usize, rep: usize) -> u64 {
        run_seed(self.master_seed, config, rep)
    }
}

pub fn run_seed(master: u64, config: usize, rep: usize) -> u64 {
    master.wrapping_add(((config as u64) << 32) | rep as u64)
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
