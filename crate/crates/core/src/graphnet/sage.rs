//! Graphsage: `h' = σ(W · [h_i ‖ agg_{j∈N(i)} h_j])`.

use super::graph::Graph;
use super::layer::{apply_site, BatchNorm, LayerConfig, Linear, Regularizer, SsfgPlacement};
use crate::autodiff::{ParamStore, Phase, ReduceKind, Tape, Var};
use crate::error::Result;
use crate::graphnet::layer::Aggregator;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct SageParams<T> {
    pub linear: Linear,
    pub bn: Option<BatchNorm<T>>,
}

impl<T: Scalar> SageParams<T> {
    pub fn init(store: &mut ParamStore<T>, name: &str, cfg: &LayerConfig, rng: &mut RngStream) -> Self {
        SageParams {
            linear: Linear::init(store, &format!("{name}.w"), 2 * cfg.in_dim, cfg.out_dim, cfg.bias, rng),
            bn: cfg.batchnorm.then(|| BatchNorm::init(store, &format!("{name}.bn"), cfg.out_dim)),
        }
    }
}

/// The neighborhood never includes the node itself; self-loops in `g` are
/// ignored and the concatenation supplies the node's own features. Nodes
/// without neighbors aggregate to zero.
#[allow(clippy::too_many_arguments)]
pub fn sage_layer<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    g: &Graph<T>,
    h: Var,
    params: &mut SageParams<T>,
    cfg: &LayerConfig,
    sites: &mut [Regularizer],
    phase: Phase,
) -> Result<Var> {
    let mut x = h;
    if cfg.ssfg_placement == SsfgPlacement::Input {
        x = apply_site(sites, 0, tape, x, phase)?;
    }
    let nb = g.neighbor_index();
    let messages = tape.gather_rows(x, &nb.src)?;
    let kind = match cfg.aggregator {
        Aggregator::Mean => ReduceKind::Mean,
        Aggregator::Sum => ReduceKind::Sum,
    };
    let agg = tape.segment_reduce(kind, messages, &nb.by_dst)?;
    let joined = tape.concat_cols(x, agg)?;
    let mut z = params.linear.forward(tape, store, joined)?;
    if let Some(bn) = &mut params.bn {
        z = bn.forward(tape, store, z, phase)?;
    }
    let mut out = tape.relu(z);
    if cfg.ssfg_placement == SsfgPlacement::Default {
        out = apply_site(sites, 0, tape, out, phase)?;
    }
    if cfg.residual {
        out = tape.add(h, out)?;
    }
    Ok(out)
}
