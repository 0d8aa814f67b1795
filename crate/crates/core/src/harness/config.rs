//! Run configuration: a versioned TOML file in which every field has a
//! default and unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{MaskPolicy, PolicyKind};
use crate::model::ModelConfig;
use crate::optim::OptimConfig;
use crate::tasks::TaskKind;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Drop probability for the Bernoulli policies.
    pub p: f64,
    /// `k` for the freeze policies; 0 means `ceil(L / T)` so the network is
    /// fully unfrozen by the final epoch.
    pub layers_per_epoch: usize,
    /// Rescale surviving gradients by `1/(1-p)`.
    pub scale_grads: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Sft,
            p: 0.2,
            layers_per_epoch: 0,
            scale_grads: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Fine-tuning epochs `T`; also the `T` of every schedule.
    pub epochs: usize,
    pub batch_size: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub task: TaskKind,
    /// Run the masked-token pretraining phase before fine-tuning.
    pub pretrain: bool,
    pub pretrain_sequences: usize,
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            train_samples: 2000,
            test_samples: 1000,
            task: TaskKind::MajorityToken,
            pretrain: false,
            pretrain_sequences: 2000,
            pretrain_epochs: 2,
        }
    }
}

/// Independent seeds so paired comparisons share data and initialisation
/// while differing only in masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub data: u64,
    pub init: u64,
    pub mask: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            data: 100,
            init: 200,
            mask: 300,
        }
    }
}

impl SeedConfig {
    /// Seeds for grid cell `i`: every stream shifted by the cell index.
    pub fn cell(&self, i: u64) -> SeedConfig {
        SeedConfig {
            data: self.data + i,
            init: self.init + i,
            mask: self.mask + i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: ConfigVersion,
    pub model: ModelConfig,
    pub policy: PolicyConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub seeds: SeedConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigVersion(pub u32);

impl Default for ConfigVersion {
    fn default() -> Self {
        ConfigVersion(CONFIG_VERSION)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version.0 != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version.0
            )));
        }
        self.model.validate()?;
        self.optim.validate()?;
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.train.train_samples == 0 || self.train.test_samples == 0 {
            return Err(Error::Config("sample counts must be >= 1".into()));
        }
        if self.model.max_len < 2 {
            return Err(Error::Config("model.max_len must be >= 2".into()));
        }
        if self.train.pretrain && self.train.pretrain_epochs == 0 {
            return Err(Error::Config(
                "train.pretrain_epochs must be >= 1 when pretraining".into(),
            ));
        }
        self.mask_policy().validate()
    }

    /// Realise the mask policy, tying its `T` to the training epochs and
    /// resolving the freeze default `k = ceil(L / T)`.
    pub fn mask_policy(&self) -> MaskPolicy {
        let layers_per_epoch = if self.policy.layers_per_epoch > 0 {
            self.policy.layers_per_epoch
        } else {
            self.model.layers.div_ceil(self.train.epochs)
        };
        MaskPolicy {
            kind: self.policy.kind,
            p: self.policy.p,
            epochs: self.train.epochs,
            layers_per_epoch,
            scale_grads: self.policy.scale_grads,
        }
    }
}
