use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layer::Linear;
use crate::autodiff::{ParamStore, ReduceKind, Segments, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClass,
    GraphClass,
    GraphRegress,
}

impl Task {
    pub fn is_graph_level(self) -> bool {
        !matches!(self, Task::NodeClass)
    }
}

/// Node tasks: one linear map to logits. Graph tasks: mean over each
/// graph's nodes, then `d → max(d/2, 1) → relu → outputs`.
#[derive(Clone, Debug)]
pub enum ReadoutParams {
    Node(Linear),
    Graph { hidden: Linear, out: Linear },
}

impl ReadoutParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        task: Task,
        dim: usize,
        outputs: usize,
        rng: &mut RngStream,
    ) -> Self {
        match task {
            Task::NodeClass => ReadoutParams::Node(Linear::init(store, "readout", dim, outputs, true, rng)),
            Task::GraphClass | Task::GraphRegress => {
                let mid = (dim / 2).max(1);
                ReadoutParams::Graph {
                    hidden: Linear::init(store, "readout.hidden", dim, mid, true, rng),
                    out: Linear::init(store, "readout.out", mid, outputs, true, rng),
                }
            }
        }
    }
}

/// `node_graph` assigns every node to its graph; required for graph tasks.
pub fn readout<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &ReadoutParams,
    h: Var,
    node_graph: Option<&Arc<Segments>>,
) -> Result<Var> {
    match params {
        ReadoutParams::Node(lin) => lin.forward(tape, store, h),
        ReadoutParams::Graph { hidden, out } => {
            let seg = node_graph.ok_or_else(|| {
                Error::Contract("graph-level readout needs a node-to-graph assignment".into())
            })?;
            let pooled = tape.segment_reduce(ReduceKind::Mean, h, seg)?;
            let z = hidden.forward(tape, store, pooled)?;
            let z = tape.relu(z);
            out.forward(tape, store, z)
        }
    }
}
