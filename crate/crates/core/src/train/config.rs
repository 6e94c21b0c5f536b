use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{BlockOptions, Profile};

use super::{GpConfig, OptimizerConfig, TrainError};

fn default_critic_steps() -> usize {
    3
}
fn default_epochs() -> u32 {
    1
}
fn default_checkpoint_every() -> u32 {
    1
}

/// Everything a training run depends on. Unknown keys are rejected when
/// parsed from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub profile: Profile,
    /// Defaults to 16 for the canonical profile and 32 for the reduced one.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Critic updates per generator update.
    #[serde(default = "default_critic_steps")]
    pub critic_steps: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    /// Save a generator snapshot every this many epochs.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub block: BlockOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            profile: Profile::Canonical,
            batch_size: None,
            critic_steps: default_critic_steps(),
            optimizer: OptimizerConfig::default(),
            epochs: default_epochs(),
            checkpoint_every: default_checkpoint_every(),
            seed: 0,
            gp: GpConfig::default(),
            block: BlockOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn reduced(seed: u64) -> Self {
        TrainConfig {
            profile: Profile::Reduced,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.profile {
            Profile::Canonical => 16,
            Profile::Reduced => 32,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.critic_steps < 1 {
            return Err(TrainError::Config("critic_steps must be at least 1".into()));
        }
        if self.batch_size() < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(TrainError::Config(
                "checkpoint_every must be at least 1".into(),
            ));
        }
        let rate = self.block.dropout_rate;
        if !(0.0..1.0).contains(&rate) {
            return Err(TrainError::Config("dropout_rate must lie in [0, 1)".into()));
        }
        self.optimizer.validate()?;
        self.gp.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}
