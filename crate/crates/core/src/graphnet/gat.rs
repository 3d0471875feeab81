//! Graph attention: every head scores edges with
//! `leaky_relu(a_lᵀ W h_i + a_rᵀ W h_j)`, normalizes the scores over each
//! node's incoming edges and sums the weighted messages `W h_j`.

use super::graph::Graph;
use super::layer::{apply_site, uniform, BatchNorm, HeadMerge, LayerConfig, Regularizer, SsfgPlacement};
use crate::autodiff::{ParamId, ParamStore, Phase, ReduceKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct GatHead<T> {
    /// `in × head_dim`
    pub weight: ParamId,
    /// `head_dim × 1`, applied to the destination node.
    pub attn_dst: ParamId,
    /// `head_dim × 1`, applied to the source node.
    pub attn_src: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BatchNorm<T>>,
}

#[derive(Clone, Debug)]
pub struct GatParams<T> {
    pub heads: Vec<GatHead<T>>,
}

impl<T: Scalar> GatParams<T> {
    pub fn init(store: &mut ParamStore<T>, name: &str, cfg: &LayerConfig, rng: &mut RngStream) -> Self {
        let dh = cfg.head_dim();
        let heads = (0..cfg.heads)
            .map(|k| {
                let p = format!("{name}.head{k}");
                GatHead {
                    weight: store.add(format!("{p}.weight"), uniform(&[cfg.in_dim, dh], cfg.in_dim, rng)),
                    attn_dst: store.add(format!("{p}.attn_dst"), uniform(&[dh, 1], dh, rng)),
                    attn_src: store.add(format!("{p}.attn_src"), uniform(&[dh, 1], dh, rng)),
                    bias: cfg.bias.then(|| store.add(format!("{p}.bias"), Tensor::zeros(&[dh]))),
                    bn: cfg.batchnorm.then(|| BatchNorm::init(store, &format!("{p}.bn"), dh)),
                }
            })
            .collect();
        GatParams { heads }
    }
}

/// Per-head attention weights of the last forward pass, one `E × 1` tape
/// variable per head, for inspection.
pub struct GatOutput {
    pub h: Var,
    pub attention: Vec<Var>,
}

/// Requires every node to have an incoming edge; callers add self-loops.
/// Each head's output passes through ELU and then its regularization site.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    g: &Graph<T>,
    h: Var,
    params: &mut GatParams<T>,
    cfg: &LayerConfig,
    sites: &mut [Regularizer],
    phase: Phase,
) -> Result<GatOutput> {
    let idx = g.edge_index();
    if let Some(i) = idx.by_dst.counts().iter().position(|&c| c == 0) {
        return Err(Error::Degenerate(format!(
            "node {i} has no incoming edge; attention is undefined"
        )));
    }
    let mut x = h;
    if cfg.ssfg_placement == SsfgPlacement::Input {
        x = apply_site(sites, 0, tape, x, phase)?;
    }
    let mut outs = Vec::with_capacity(params.heads.len());
    let mut attention = Vec::with_capacity(params.heads.len());
    for (k, head) in params.heads.iter_mut().enumerate() {
        let w = tape.param(store, head.weight);
        let z = tape.matmul(x, w)?;
        let a_dst = tape.param(store, head.attn_dst);
        let a_src = tape.param(store, head.attn_src);
        let s_dst = tape.matmul(z, a_dst)?;
        let s_src = tape.matmul(z, a_src)?;
        let e_dst = tape.gather_rows(s_dst, &idx.dst)?;
        let e_src = tape.gather_rows(s_src, &idx.src)?;
        let raw = tape.add(e_dst, e_src)?;
        let scores = tape.leaky_relu(raw, GAT_NEGATIVE_SLOPE);
        let alpha = tape.segment_softmax(scores, &idx.by_dst)?;
        let z_src = tape.gather_rows(z, &idx.src)?;
        let weighted = tape.mul(z_src, alpha)?;
        let mut out = tape.segment_reduce(ReduceKind::Sum, weighted, &idx.by_dst)?;
        if let Some(b) = head.bias {
            let b = tape.param(store, b);
            out = tape.add(out, b)?;
        }
        if let Some(bn) = &mut head.bn {
            out = bn.forward(tape, store, out, phase)?;
        }
        out = tape.elu(out);
        if cfg.ssfg_placement == SsfgPlacement::Default {
            out = apply_site(sites, k, tape, out, phase)?;
        }
        outs.push(out);
        attention.push(alpha);
    }
    let mut merged = outs[0];
    for &o in &outs[1..] {
        merged = match cfg.head_merge {
            HeadMerge::Concat => tape.concat_cols(merged, o)?,
            HeadMerge::Mean => tape.add(merged, o)?,
        };
    }
    if cfg.head_merge == HeadMerge::Mean && outs.len() > 1 {
        merged = tape.scale(merged, T::one() / T::lit(outs.len() as f64));
    }
    if cfg.residual {
        merged = tape.add(h, merged)?;
    }
    Ok(GatOutput { h: merged, attention })
}
