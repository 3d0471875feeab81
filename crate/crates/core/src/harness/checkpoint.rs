//! Checkpoints: a JSON manifest plus one binary file of little-endian `f64`
//! values, parameters first (in manifest order), then batch-norm running
//! statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::TrainedModel;
use crate::error::{Error, Result};
use crate::graphnet::{GraphNet, ModelConfig};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the binary file, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormEntry {
    pub dim: usize,
    /// Offset of the running means; running variances follow.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment: ExperimentConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub binary: String,
    pub params: Vec<ParamEntry>,
    pub batch_norm: Vec<BatchNormEntry>,
}

fn binary_path(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().map(|p| p.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

/// Writes `path` (manifest) and a sibling `.bin` file.
pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let binary = path
        .with_extension("bin")
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", path.display())))?
        .to_string();
    let mut values: Vec<f64> = Vec::new();
    let mut params = Vec::new();
    for p in model.net.store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: values.len(),
        });
        values.extend_from_slice(p.value.data());
    }
    let mut batch_norm = Vec::new();
    for s in model.net.bn_states() {
        batch_norm.push(BatchNormEntry {
            dim: s.dim(),
            offset: values.len(),
        });
        values.extend_from_slice(&s.running_mean);
        values.extend_from_slice(&s.running_var);
    }
    let manifest = Manifest {
        experiment: model.experiment.clone(),
        model: model.net.config().clone(),
        seed: model.seed,
        binary: binary.clone(),
        params,
        batch_norm,
    };
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(binary_path(path, &binary), bytes)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse {
        record: None,
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Parse {
        record: None,
        message: e.to_string(),
    })?;
    let bytes = fs::read(binary_path(path, &manifest.binary))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Validation(format!("checkpoint binary has {} bytes, not a multiple of 8", bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let read = |offset: usize, len: usize, what: &str| -> Result<&[f64]> {
        values.get(offset..offset + len).ok_or_else(|| {
            Error::Validation(format!("checkpoint binary too short for {what} at offset {offset}"))
        })
    };
    let mut net = GraphNet::<f64>::new(manifest.model.clone(), &RngStream::new(manifest.seed))?;
    if net.store.len() != manifest.params.len() {
        return Err(Error::Validation(format!(
            "manifest lists {} parameters, model has {}",
            manifest.params.len(),
            net.store.len()
        )));
    }
    for (p, entry) in net.store.iter_mut().zip(&manifest.params) {
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(Error::Validation(format!(
                "parameter {} {:?} does not match manifest entry {} {:?}",
                p.name,
                p.value.shape(),
                entry.name,
                entry.shape
            )));
        }
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(read(entry.offset, n, &entry.name)?);
    }
    let mut states = net.bn_states_mut();
    if states.len() != manifest.batch_norm.len() {
        return Err(Error::Validation(format!(
            "manifest lists {} batch-norm layers, model has {}",
            manifest.batch_norm.len(),
            states.len()
        )));
    }
    for (s, entry) in states.iter_mut().zip(&manifest.batch_norm) {
        if s.dim() != entry.dim {
            return Err(Error::Validation(format!("batch-norm width {} vs manifest {}", s.dim(), entry.dim)));
        }
        s.running_mean.copy_from_slice(read(entry.offset, entry.dim, "running mean")?);
        s.running_var.copy_from_slice(read(entry.offset + entry.dim, entry.dim, "running variance")?);
    }
    Ok(TrainedModel {
        experiment: manifest.experiment,
        seed: manifest.seed,
        net,
    })
}
