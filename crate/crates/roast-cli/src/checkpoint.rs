//! Model checkpoints: one JSON document holding the model spec, the init
//! seed and every parameter tensor. Values are written in shortest
//! round-trip decimal form, so loading restores them bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use roast_core::model::{Model, ParameterStore};
use roast_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
struct ParamJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    spec: ModelConfig,
    seed: u64,
    parameters: BTreeMap<String, ParamJson>,
}

pub fn save_checkpoint(model: &Model, seed: u64, path: &Path) -> Result<(), CliError> {
    let parameters = model
        .store
        .iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                ParamJson {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        spec: ModelConfig::from_spec(&model.spec),
        seed,
        parameters,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| CliError::Io(format!("serialize checkpoint: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, u64), CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&raw)
        .map_err(|e| CliError::Validation(format!("malformed checkpoint: {e}")))?;
    let spec = file.spec.to_spec()?;
    // rebuild in layout order, pulling tensors out of the name map
    let template = roast_core::model::init_parameters(&spec, 0)?;
    let mut entries = Vec::new();
    let mut params = file.parameters;
    for (name, _) in template.iter() {
        let p = params.remove(name).ok_or_else(|| {
            CliError::Validation(format!("checkpoint missing parameter {name}"))
        })?;
        entries.push((name.to_string(), Tensor::new(p.shape, p.data)?));
    }
    if let Some(extra) = params.keys().next() {
        return Err(CliError::Validation(format!(
            "checkpoint has unknown parameter {extra}"
        )));
    }
    let store = ParameterStore::from_entries(entries)?;
    Ok((Model::from_parts(spec, store)?, file.seed))
}
