//! Run configuration shared by every command, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::architectures::{AttentionPlacement, BuildOptions, ModelName};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::tfr::{FeaturizeConfig, ImageConfig, TfrConfig, WrapConfig};
use crate::train_eval::{Fractions, TrainConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_per_class: usize,
    pub duration_s: f64,
    pub sampling_rate_hz: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            duration_s: 10.0,
            sampling_rate_hz: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub name: ModelName,
    pub heads: usize,
    pub attention_placement: AttentionPlacement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let b = BuildOptions::default();
        Self {
            name: ModelName::Cnn2d,
            heads: b.heads,
            attention_placement: b.attention_placement,
        }
    }
}

impl ModelConfig {
    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            heads: self.heads,
            attention_placement: self.attention_placement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub tfr: TfrConfig,
    pub image: ImageConfig,
    pub wrap: WrapConfig,
    pub model: ModelConfig,
    pub split: Fractions,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            tfr: TfrConfig::default(),
            image: ImageConfig::default(),
            wrap: WrapConfig::default(),
            model: ModelConfig::default(),
            split: Fractions::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved config into `dir` as `run_config.toml`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    pub fn featurize(&self) -> FeaturizeConfig {
        FeaturizeConfig {
            preprocess: self.preprocess.clone(),
            tfr: self.tfr.clone(),
            image: self.image.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_per_class == 0 || !(d.duration_s > 0.0) || !(d.sampling_rate_hz > 0.0) {
            return Err(Error::Config(
                "data: n_per_class, duration_s and sampling_rate_hz must be positive".into(),
            ));
        }
        if self.wrap.pool_k == 0 {
            return Err(Error::Config("wrap.pool_k must be positive".into()));
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be positive".into()));
        }
        self.image.validate()?;
        self.tfr.frequencies_hz()?;
        Ok(())
    }
}
