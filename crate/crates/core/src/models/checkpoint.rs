//! Self-describing JSON checkpoints: config, concept names, preprocessing,
//! scaler statistics, training history and named parameter tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Tensor;
use crate::preprocess::{PreprocessConfig, ScalerStats};
use crate::scalar::Scalar;

use super::config::ModelConfig;
use super::model::{EpochStats, Model};

pub const CHECKPOINT_FORMAT: &str = "prognostics-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NamedTensor<T> {
    name: String,
    tensor: Tensor<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct CheckpointFile<T> {
    format: String,
    version: u32,
    scalar: String,
    config: ModelConfig,
    concepts: Vec<String>,
    preprocess: PreprocessConfig,
    scaler: Option<ScalerStats>,
    history: Vec<EpochStats>,
    parameters: Vec<NamedTensor<T>>,
}

fn scalar_name<T: Scalar>() -> String {
    std::any::type_name::<T>().to_string()
}

impl<T: Scalar> Model<T> {
    pub fn to_checkpoint(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: scalar_name::<T>(),
            config: self.config.clone(),
            concepts: self.concepts.clone(),
            preprocess: self.preprocess.clone(),
            scaler: self.scaler.clone(),
            history: self.history.clone(),
            parameters: self
                .params
                .named()
                .map(|(name, t)| NamedTensor { name: name.to_string(), tensor: t.clone() })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let file: CheckpointFile<T> = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("not a checkpoint (format {:?})", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!("unsupported checkpoint version {}", file.version)));
        }
        if file.scalar != scalar_name::<T>() {
            return Err(Error::Input(format!(
                "checkpoint stores {} parameters, loader expects {}",
                file.scalar,
                scalar_name::<T>()
            )));
        }
        let mut model = Model::new(file.config, file.concepts, file.preprocess)?;
        if file.parameters.len() != model.params.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} parameter tensors, architecture needs {}",
                file.parameters.len(),
                model.params.len()
            )));
        }
        for nt in file.parameters {
            let id = model
                .params
                .find(&nt.name)
                .ok_or_else(|| Error::Input(format!("unexpected parameter {:?}", nt.name)))?;
            if nt.tensor.shape() != model.params.value(id).shape() {
                return Err(Error::Input(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    nt.name,
                    nt.tensor.shape(),
                    model.params.value(id).shape()
                )));
            }
            *model.params.value_mut(id) = nt.tensor;
        }
        model.scaler = file.scaler;
        model.history = file.history;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_checkpoint(&text)
    }
}
