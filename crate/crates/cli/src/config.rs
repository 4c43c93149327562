//! Run configuration: one TOML file with generator, training and split
//! sections, overridable by CLI flags. Every command writes its fully
//! resolved configuration next to its outputs.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use evrec_core::domain::TrainConfig;
use evrec_core::master::DaySplit;
use evrec_core::scenario::GeneratorConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: Option<usize>,
    pub valid: Option<usize>,
    pub test: Option<usize>,
}

impl SplitConfig {
    /// Explicit day counts when given, otherwise the proportional default.
    pub fn resolve(&self, n_days: usize) -> Result<DaySplit, String> {
        match (self.train, self.valid, self.test) {
            (None, None, None) => Ok(DaySplit::proportional(n_days)),
            (train, valid, test) => {
                let proportional = DaySplit::proportional(n_days);
                DaySplit::from_counts(
                    n_days,
                    train.unwrap_or(proportional.train.len()),
                    valid.unwrap_or(proportional.valid.len()),
                    test.unwrap_or(proportional.test.len()),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; auto-generated and recorded when absent.
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Fills in the seed (generating one if needed) and mirrors it into the
    /// generator and trainer so a single value drives the whole run.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or_else(rand::random);
        self.seed = Some(seed);
        self.generator.seed = seed;
        self.train.seed = seed;
        seed
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self).context("serialize resolved config")?;
        std::fs::write(dir.join("resolved_config.toml"), text)?;
        Ok(())
    }
}
