use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::eval::{CouponConfig, Variant};
use crate::loss::LossScheme;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives initialisation and shuffling.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Ignored by the baselines, which fix their own weighting.
    pub loss_scheme: LossScheme,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            batch_size: 256,
            epochs: 15,
            seed: 7,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            loss_scheme: LossScheme::Uncertainty,
            variant: Variant::TpgDnn,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.learning_rate) || !positive(self.epsilon) {
            return Err(Error::Config("learning rate and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// F1 decision threshold.
    pub threshold: f64,
    pub coupons: CouponConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            coupons: CouponConfig::default(),
        }
    }
}

/// Everything a run needs, as read from a TOML file with optional
/// `[data]`, `[model]`, `[train]` and `[eval]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound("config", path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
