use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelArch, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

/// JSON sidecar of a parameter checkpoint. The `.bin` file holds
/// `num_params` little-endian f64 values in layout order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub arch: ModelArch,
    pub num_params: usize,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn describe(params: &ModelParams) -> Self {
        let arch = params.arch();
        let layout = params.layout();
        let mut tensors: Vec<TensorEntry> = layout
            .embeddings
            .iter()
            .enumerate()
            .map(|(f, &offset)| TensorEntry {
                name: format!("embedding.{f}"),
                offset,
                shape: vec![arch.bucket_counts[f] as usize, arch.embedding_dims[f]],
            })
            .collect();
        for (l, s) in layout.layers.iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("dense.{l}.weight"),
                offset: s.weight,
                shape: vec![s.fan_out, s.fan_in],
            });
            tensors.push(TensorEntry {
                name: format!("dense.{l}.bias"),
                offset: s.bias,
                shape: vec![s.fan_out],
            });
        }
        Self {
            arch: arch.clone(),
            num_params: params.len(),
            tensors,
        }
    }
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

pub fn save_checkpoint(params: &ModelParams, dir: &Path, stem: &str) -> Result<(), ModelError> {
    let (bin, json) = paths(dir, stem);
    let bytes: Vec<u8> = params.flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(bin, bytes)?;
    fs::write(
        json,
        serde_json::to_string_pretty(&CheckpointManifest::describe(params))?,
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<ModelParams, ModelError> {
    let (bin, json) = paths(dir, stem);
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(json)?)?;
    let bytes = fs::read(bin)?;
    if bytes.len() != manifest.num_params * 8 {
        return Err(ModelError::Contract(format!(
            "checkpoint holds {} bytes, manifest expects {} parameters",
            bytes.len(),
            manifest.num_params
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ModelParams::from_flat(&manifest.arch, data)?;
    if CheckpointManifest::describe(&params) != manifest {
        return Err(ModelError::Contract("tensor table does not match architecture".into()));
    }
    Ok(params)
}
