use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{AnyModel, Variant};
use crate::model::{InputSpec, ModelConfig, MultiTaskModel};
use crate::nn::NamedTensor;

pub const CHECKPOINT_FORMAT: &str = "tpg-dnn-checkpoint/1";

/// A self-describing JSON snapshot: architecture, training settings, every
/// parameter tensor with its shape, and the optimiser moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub variant: Variant,
    pub model: ModelConfig,
    pub input: InputSpec,
    pub train: TrainConfig,
    /// SHA-256 of the four fields above.
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub params: Vec<NamedTensor>,
    pub optimizer: AdamState,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    variant: Variant,
    model: &'a ModelConfig,
    input: &'a InputSpec,
    train: &'a TrainConfig,
}

pub fn config_hash(variant: Variant, model: &ModelConfig, input: &InputSpec, train: &TrainConfig) -> String {
    let bytes = serde_json::to_vec(&HashedConfig {
        variant,
        model,
        input,
        train,
    })
    .expect("configuration serialises");
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn capture(
        model_config: &ModelConfig,
        input: &InputSpec,
        train: &TrainConfig,
        model: &AnyModel,
        optimizer: &AdamState,
        epoch: usize,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            variant: train.variant,
            model: model_config.clone(),
            input: input.clone(),
            train: train.clone(),
            config_hash: config_hash(train.variant, model_config, input, train),
            epoch,
            params: model.params().entries().to_vec(),
            optimizer: optimizer.clone(),
        }
    }

    /// Rebuilds the network and loads the stored parameters into it.
    pub fn restore(&self) -> Result<AnyModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", self.format)));
        }
        if self.config_hash != config_hash(self.variant, &self.model, &self.input, &self.train) {
            return Err(Error::Config("checkpoint config hash mismatch".into()));
        }
        let mut model = self
            .variant
            .build(&self.model, &self.input, self.train.loss_scheme, self.train.seed)?;
        model.params_mut().load(self.params.clone())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound("checkpoint", path.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
