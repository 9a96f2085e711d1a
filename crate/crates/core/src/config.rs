//! Experiment configuration, read from TOML.
//!
//! ```toml
//! version = 1
//! seed = 2024
//!
//! [geometry]
//! nx = 64
//! ny = 64
//! voxel_size = 1.0
//! n_angles = 96
//! n_bins = 93
//! bin_width = 1.0
//!
//! [train]
//! phantom = "train"          # a preset name, or an inline table
//! total_net_trues = 2.0e4
//! random_fraction = 0.909
//! n_realizations = 5
//!
//! [test]
//! phantom = "test"
//! total_net_trues = 5.0e4
//! random_fraction = 0.875
//! n_realizations = 5
//!
//! [denoiser]
//! n_filters = 16
//! size = 3
//! stages = 10
//! train = { epochs = 100, learning_rate = 0.01 }
//!
//! [recon]
//! iterations = 10
//! c = 0.3
//! ```
//!
//! Omitted tables take their defaults. Scenario seeds, when absent, are
//! derived from the global seed so a single number fixes every draw.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{PhantomSpec, ScenarioSpec};
use crate::projector::Geometry;
use crate::recon::ReconConfig;
use crate::rng::{self, Purpose};
use crate::training::DenoiserConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomPreset {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhantomChoice {
    Preset(PhantomPreset),
    Custom(PhantomSpec),
}

impl PhantomChoice {
    pub fn spec(&self) -> PhantomSpec {
        match self {
            PhantomChoice::Preset(PhantomPreset::Train) => PhantomSpec::preset_train(),
            PhantomChoice::Preset(PhantomPreset::Test) => PhantomSpec::preset_test(),
            PhantomChoice::Custom(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub phantom: PhantomChoice,
    pub total_net_trues: f64,
    pub random_fraction: f64,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_realizations() -> usize {
    5
}

/// β grid for `sweep-beta`: explicit values, or powers of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Option<Vec<f64>>,
    pub min_exponent: i32,
    pub max_exponent: i32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: None,
            min_exponent: -15,
            max_exponent: 15,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        match &self.betas {
            Some(b) => b.clone(),
            None => (self.min_exponent..=self.max_exponent).map(|k| 2f64.powi(k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub geometry: Geometry,
    pub train: ScenarioConfig,
    pub test: ScenarioConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// Which of the two scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, e: Error| Error::Config(format!("{what}: {e}"));
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.geometry.validate().map_err(|e| wrap("geometry", e))?;
        self.scenario(Split::Train).validate().map_err(|e| wrap("train", e))?;
        self.scenario(Split::Test).validate().map_err(|e| wrap("test", e))?;
        self.denoiser.validate().map_err(|e| wrap("denoiser", e))?;
        self.recon.validate().map_err(|e| wrap("recon", e))?;
        if self.sweep.grid().is_empty() {
            return Err(Error::Config("sweep: empty beta grid".into()));
        }
        Ok(())
    }

    /// The scenario with its seed resolved.
    pub fn scenario(&self, split: Split) -> ScenarioSpec {
        let s = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        ScenarioSpec {
            phantom: s.phantom.spec(),
            total_net_trues: s.total_net_trues,
            random_fraction: s.random_fraction,
            n_realizations: s.n_realizations,
            seed: s
                .seed
                .unwrap_or_else(|| rng::derive_seed(self.seed, Purpose::ScenarioSeed, split.index())),
        }
    }

    /// A small configuration that runs end to end in seconds.
    pub fn quick() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            out_dir: None,
            geometry: Geometry::square(24, 32),
            train: ScenarioConfig {
                phantom: PhantomChoice::Preset(PhantomPreset::Train),
                total_net_trues: 8e3,
                random_fraction: 0.909,
                n_realizations: 2,
                seed: None,
            },
            test: ScenarioConfig {
                phantom: PhantomChoice::Preset(PhantomPreset::Test),
                total_net_trues: 2e4,
                random_fraction: 0.875,
                n_realizations: 2,
                seed: None,
            },
            denoiser: DenoiserConfig {
                n_filters: 4,
                size: 3,
                stages: 2,
                train: crate::denoiser::TrainConfig {
                    epochs: 5,
                    ..Default::default()
                },
            },
            recon: ReconConfig {
                iterations: 2,
                em_iterations: 5,
                n_em_init: 3,
                c: 0.3,
                ..Default::default()
            },
            sweep: SweepConfig {
                betas: None,
                min_exponent: -2,
                max_exponent: 0,
            },
        }
    }

    /// The laptop-scale study: 64×64 grid, a 9:1 training phantom at 2e4 net
    /// trues and a reshaped 4:1 test phantom at 5e4, five realizations each.
    pub fn desk() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 2024,
            out_dir: None,
            geometry: Geometry::square(64, 96),
            train: ScenarioConfig {
                phantom: PhantomChoice::Preset(PhantomPreset::Train),
                total_net_trues: 2e4,
                random_fraction: 0.909,
                n_realizations: 5,
                seed: Some(11),
            },
            test: ScenarioConfig {
                phantom: PhantomChoice::Preset(PhantomPreset::Test),
                total_net_trues: 5e4,
                random_fraction: 0.875,
                n_realizations: 5,
                seed: Some(22),
            },
            denoiser: DenoiserConfig {
                n_filters: 16,
                size: 3,
                stages: 10,
                train: crate::denoiser::TrainConfig {
                    epochs: 100,
                    learning_rate: 0.01,
                    ..Default::default()
                },
            },
            recon: ReconConfig {
                iterations: 10,
                c: 0.3,
                ..Default::default()
            },
            sweep: SweepConfig::default(),
        }
    }
}
