//! A stack of graph layers between an input embedding and a readout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::gat::{gat_layer, GatParams};
use super::gated_gcn::{gatedgcn_layer, GatedGcnParams};
use super::graph::Graph;
use super::layer::{
    Aggregator, BatchNorm, HeadMerge, LayerConfig, LayerKind, Linear, Regularizer, SsfgPlacement,
};
use super::readout::{readout, ReadoutParams, Task};
use super::sage::{sage_layer, SageParams};
use crate::autodiff::{BatchNormState, ParamStore, Phase, Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::ssfg::{DropoutConfig, SsfgConfig};

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub task: Task,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Number of classes, or 1 for regression.
    pub outputs: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default = "yes")]
    pub residual: bool,
    #[serde(default = "yes")]
    pub batchnorm: bool,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default)]
    pub aggregator: Aggregator,
    #[serde(default = "yes")]
    pub gate_normalization: bool,
    #[serde(default)]
    pub ssfg_placement: SsfgPlacement,
}

impl ModelConfig {
    pub fn new(kind: LayerKind, task: Task, input_dim: usize, hidden_dim: usize, layers: usize, outputs: usize) -> Self {
        ModelConfig {
            kind,
            task,
            input_dim,
            hidden_dim,
            layers,
            outputs,
            heads: 1,
            residual: true,
            batchnorm: true,
            bias: true,
            aggregator: Aggregator::Mean,
            gate_normalization: true,
            ssfg_placement: SsfgPlacement::Default,
        }
    }

    /// Per-layer configurations. GAT layers concatenate their heads except
    /// the last, which averages them.
    pub fn layer_configs(&self) -> Vec<LayerConfig> {
        (0..self.layers)
            .map(|l| {
                let mut c = LayerConfig::new(self.kind, self.hidden_dim, self.hidden_dim);
                c.residual = self.residual;
                c.batchnorm = self.batchnorm;
                c.bias = self.bias;
                c.aggregator = self.aggregator;
                c.gate_normalization = self.gate_normalization;
                c.ssfg_placement = self.ssfg_placement;
                if self.kind == LayerKind::Gat {
                    let merge = if l + 1 == self.layers { HeadMerge::Mean } else { HeadMerge::Concat };
                    c = c.with_heads(self.heads, merge);
                }
                c
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.outputs == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.task == Task::GraphRegress && self.outputs != 1 {
            return Err(Error::Config("regression has exactly one output".into()));
        }
        for c in self.layer_configs() {
            c.validate()?;
        }
        Ok(())
    }

    /// Whether this architecture works on self-looped graphs.
    pub fn uses_self_loops(&self) -> bool {
        self.kind != LayerKind::Sage
    }
}

#[derive(Clone, Debug)]
pub enum LayerParams<T> {
    Sage(SageParams<T>),
    Gat(GatParams<T>),
    GatedGcn(GatedGcnParams<T>),
}

#[derive(Clone, Debug)]
struct LayerSlot<T> {
    cfg: LayerConfig,
    params: LayerParams<T>,
}

/// A batch of graphs merged into one disjoint union, already prepared for
/// the model's architecture.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub graph: Graph<T>,
    pub node_graph: Arc<Segments>,
    pub num_graphs: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn new(graphs: &[&Graph<T>], self_loops: bool) -> Result<Self> {
        let (g, owner) = if graphs.len() == 1 {
            (graphs[0].clone(), vec![0; graphs[0].num_nodes()])
        } else {
            Graph::disjoint_union(graphs)?
        };
        let graph = if self_loops { g.add_self_loops() } else { g };
        Ok(Batch {
            graph,
            node_graph: Arc::new(Segments::new(owner, graphs.len())?),
            num_graphs: graphs.len(),
        })
    }
}

/// Regularization sites of every layer for one training run.
pub struct Regularization {
    layers: Vec<Vec<Regularizer>>,
}

impl Regularization {
    /// Sites keyed `layer{l}.site{k}` under the `"ssfg"` child of `rng`.
    pub fn new(cfg: &ModelConfig, ssfg: SsfgConfig, dropout: Option<DropoutConfig>, rng: &RngStream) -> Self {
        let root = rng.derive("ssfg", 0);
        let layers = cfg
            .layer_configs()
            .iter()
            .enumerate()
            .map(|(l, c)| {
                (0..c.num_sites())
                    .map(|k| Regularizer::new(ssfg, dropout, &root, &format!("layer{l}.site{k}")))
                    .collect()
            })
            .collect();
        Regularization { layers }
    }

    /// No regularization at any site.
    pub fn none(cfg: &ModelConfig) -> Self {
        Regularization {
            layers: (0..cfg.layers).map(|_| Vec::new()).collect(),
        }
    }

    pub fn set_test_scale(&mut self, scale: f64) {
        for site in self.layers.iter_mut().flatten() {
            if let Some(s) = site.ssfg_site() {
                s.set_test_scale(scale);
            }
        }
    }

    pub fn sites_mut(&mut self) -> impl Iterator<Item = &mut Regularizer> {
        self.layers.iter_mut().flatten()
    }
}

pub struct ForwardPass {
    /// Logits (classification) or predictions (regression).
    pub output: Var,
    /// Node features produced by each graph layer.
    pub hidden: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct GraphNet<T> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    embed: Linear,
    edge_embed: Option<Linear>,
    layers: Vec<LayerSlot<T>>,
    readout: ReadoutParams,
}

impl<T: Scalar> GraphNet<T> {
    /// Initializes weights from the `"init"` child of `rng`.
    pub fn new(config: ModelConfig, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let mut rng = rng.derive("init", 0);
        let mut store = ParamStore::new();
        let d = config.hidden_dim;
        let embed = Linear::init(&mut store, "embed_h", config.input_dim, d, true, &mut rng);
        let edge_embed = (config.kind == LayerKind::GatedGcn)
            .then(|| Linear::init(&mut store, "embed_e", 1, d, true, &mut rng));
        let layers = config
            .layer_configs()
            .into_iter()
            .enumerate()
            .map(|(l, cfg)| {
                let name = format!("layer{l}");
                let params = match cfg.kind {
                    LayerKind::Sage => LayerParams::Sage(SageParams::init(&mut store, &name, &cfg, &mut rng)),
                    LayerKind::Gat => LayerParams::Gat(GatParams::init(&mut store, &name, &cfg, &mut rng)),
                    LayerKind::GatedGcn => {
                        LayerParams::GatedGcn(GatedGcnParams::init(&mut store, &name, &cfg, &mut rng))
                    }
                };
                LayerSlot { cfg, params }
            })
            .collect();
        let readout = ReadoutParams::init(&mut store, config.task, d, config.outputs, &mut rng);
        Ok(GraphNet {
            config,
            store,
            embed,
            edge_embed,
            layers,
            readout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn batch(&self, graphs: &[&Graph<T>]) -> Result<Batch<T>> {
        Batch::new(graphs, self.config.uses_self_loops())
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        reg: &mut Regularization,
        phase: Phase,
    ) -> Result<ForwardPass> {
        let g = &batch.graph;
        if g.node_features().cols() != self.config.input_dim {
            return Err(Error::dim(
                "model input",
                g.node_features().shape(),
                &[self.config.input_dim],
            ));
        }
        let x = tape.constant(g.node_features().clone());
        let mut h = self.embed.forward(tape, &self.store, x)?;
        let mut e = match &self.edge_embed {
            Some(lin) => {
                let ones = tape.constant(Tensor::ones(&[g.num_edges(), 1]));
                Some(lin.forward(tape, &self.store, ones)?)
            }
            None => None,
        };
        let mut hidden = Vec::with_capacity(self.layers.len());
        for (slot, sites) in self.layers.iter_mut().zip(reg.layers.iter_mut()) {
            let store = &self.store;
            match &mut slot.params {
                LayerParams::Sage(p) => {
                    h = sage_layer(tape, store, g, h, p, &slot.cfg, sites, phase)?;
                }
                LayerParams::Gat(p) => {
                    h = gat_layer(tape, store, g, h, p, &slot.cfg, sites, phase)?.h;
                }
                LayerParams::GatedGcn(p) => {
                    let ev = e.expect("gated layers carry edge features");
                    let out = gatedgcn_layer(tape, store, g, h, ev, p, &slot.cfg, sites, phase)?;
                    h = out.h;
                    e = Some(out.e);
                }
            }
            hidden.push(h);
        }
        let output = readout(tape, &self.store, &self.readout, h, Some(&batch.node_graph))?;
        Ok(ForwardPass { output, hidden })
    }

    /// Running batch-norm statistics in a fixed order.
    pub fn bn_states(&self) -> Vec<&BatchNormState<T>> {
        let mut out = Vec::new();
        for slot in &self.layers {
            for bn in layer_bns(&slot.params) {
                out.push(&bn.state);
            }
        }
        out
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        let mut out = Vec::new();
        for slot in &mut self.layers {
            match &mut slot.params {
                LayerParams::Sage(p) => out.extend(p.bn.as_mut().map(|b| &mut b.state)),
                LayerParams::Gat(p) => {
                    for h in &mut p.heads {
                        out.extend(h.bn.as_mut().map(|b| &mut b.state));
                    }
                }
                LayerParams::GatedGcn(p) => {
                    out.extend(p.bn_node.as_mut().map(|b| &mut b.state));
                    out.extend(p.bn_edge.as_mut().map(|b| &mut b.state));
                }
            }
        }
        out
    }
}

fn layer_bns<T>(params: &LayerParams<T>) -> Vec<&BatchNorm<T>> {
    match params {
        LayerParams::Sage(p) => p.bn.iter().collect(),
        LayerParams::Gat(p) => p.heads.iter().filter_map(|h| h.bn.as_ref()).collect(),
        LayerParams::GatedGcn(p) => p.bn_node.iter().chain(p.bn_edge.iter()).collect(),
    }
}
