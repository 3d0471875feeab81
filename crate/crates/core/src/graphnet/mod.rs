//! Graphs and the three layer families: Graphsage, GAT and GatedGCN.

mod gat;
mod gated_gcn;
mod graph;
mod layer;
mod model;
mod readout;
mod sage;

pub use gat::{gat_layer, GatHead, GatOutput, GatParams, GAT_NEGATIVE_SLOPE};
pub use gated_gcn::{gatedgcn_layer, GatedGcnOutput, GatedGcnParams, GATE_EPS};
pub use graph::{components, EdgeIndex, Graph};
pub use layer::{
    Aggregator, BatchNorm, HeadMerge, LayerConfig, LayerKind, Linear, Regularizer, SsfgPlacement,
};
pub use model::{Batch, ForwardPass, GraphNet, LayerParams, ModelConfig, Regularization};
pub use readout::{readout, ReadoutParams, Task};
pub use sage::{sage_layer, SageParams};

