//! Versioned JSON checkpoints: configuration, normalization statistics,
//! and every weight buffer with its shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::dataset::NormStats;
use crate::transformer::model::{ModelConfig, TransformerModel};
use crate::transformer::Tensor;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    norm: NormStats,
    tensors: Vec<NamedTensor>,
}

pub fn save_model(model: &TransformerModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tensors = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        norm: model.norm.clone(),
        tensors,
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::config(format!("checkpoint serialization failed: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TransformerModel> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("bad checkpoint: {e}")))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::config(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let mut model = TransformerModel::new(file.config, file.norm, 0)?;
    let names = model.param_names();
    if file.tensors.len() != names.len() {
        return Err(Error::config(format!(
            "checkpoint has {} tensors, model expects {}",
            file.tensors.len(),
            names.len()
        )));
    }
    for ((stored, name), param) in file.tensors.iter().zip(&names).zip(model.params_mut()) {
        if &stored.name != name {
            return Err(Error::config(format!(
                "checkpoint tensor '{}' does not match expected '{name}'",
                stored.name
            )));
        }
        if stored.shape != param.shape() {
            return Err(Error::config(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                stored.shape,
                param.shape()
            )));
        }
        *param = Tensor::from_vec(&stored.shape, stored.data.clone())?;
    }
    model.rebuild_positional_encoding()?;
    Ok(model)
}
