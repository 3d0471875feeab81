//! Experiment configuration, loaded from JSON with optional `key=value`
//! overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DatasetFile;
use crate::error::{Error, Result};
use crate::graphnet::{LayerKind, ModelConfig, SsfgPlacement, Task};
use crate::ssfg::{DropoutConfig, SsfgConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub architecture: LayerKind,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub residual: bool,
    pub batchnorm: bool,
    pub ssfg_placement: SsfgPlacement,
    pub ssfg: SsfgConfig,
    pub dropout: Option<DropoutConfig>,
    pub lr_init: f64,
    pub lr_reduce_factor: f64,
    pub patience: usize,
    pub lr_min: f64,
    pub max_epochs: usize,
    pub seeds: Vec<u64>,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    /// Graphs per batch for graph-level tasks.
    pub batch_size: usize,
    /// Graphs per batch for node classification.
    pub node_batch_size: usize,
    /// Smoothness reports every this many epochs; 0 disables them.
    pub diag_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            architecture: LayerKind::Gat,
            layers: 4,
            hidden: 16,
            heads: 1,
            residual: true,
            batchnorm: true,
            ssfg_placement: SsfgPlacement::Default,
            ssfg: SsfgConfig::off(),
            dropout: None,
            lr_init: 1e-3,
            lr_reduce_factor: 2.0,
            patience: 10,
            lr_min: 1e-6,
            max_epochs: 1000,
            seeds: vec![0, 1, 2, 3],
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            batch_size: 32,
            node_batch_size: 1,
            diag_every: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn graphs_per_batch(&self, task: Task) -> usize {
        match task {
            Task::NodeClass => self.node_batch_size,
            Task::GraphClass | Task::GraphRegress => self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr_min > 0.0 && self.lr_init > self.lr_min && self.lr_init.is_finite()) {
            return fail(format!(
                "need lr_init > lr_min > 0, got lr_init = {}, lr_min = {}",
                self.lr_init, self.lr_min
            ));
        }
        if !(self.lr_reduce_factor > 1.0 && self.lr_reduce_factor.is_finite()) {
            return fail(format!("lr_reduce_factor must exceed 1, got {}", self.lr_reduce_factor));
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.hidden == 0 || self.heads == 0 || self.batch_size == 0 || self.node_batch_size == 0 {
            return fail("hidden, heads, batch_size and node_batch_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let [b1, b2] = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.adam_eps > 0.0) {
            return fail(format!("invalid Adam settings: betas {:?}, eps {}", self.adam_betas, self.adam_eps));
        }
        self.ssfg.validate()?;
        if let Some(d) = &self.dropout {
            d.validate()?;
        }
        Ok(())
    }

    /// Model configuration for a dataset's task and dimensions.
    pub fn model_config(&self, data: &DatasetFile) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(
            self.architecture,
            data.task,
            data.feature_dim,
            self.hidden,
            self.layers,
            data.num_outputs(),
        );
        m.heads = if self.architecture == LayerKind::Gat { self.heads } else { 1 };
        m.residual = self.residual;
        m.batchnorm = self.batchnorm;
        m.ssfg_placement = self.ssfg_placement;
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file and applies `key=value` overrides; nested keys use
    /// dots (`ssfg.alpha=4`). Values are parsed as JSON, falling back to a
    /// plain string.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut tree: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            other => {
                *other = Value::Object(Default::default());
                other.as_object_mut().expect("just made an object")
            }
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key in {assignment:?}")))
}
