//! Residual gated graph convolution with explicit edge features.
//!
//! ```text
//! ê_ij = A h_i + B h_j + e_ij          (i = destination, j = source)
//! η_ij = sigmoid(ê_ij)
//! h_i' = h_i + relu(BN(U h_i + Σ_j η_ij ⊙ V h_j / (Σ_j η_ij + ε)))
//! e_ij' = e_ij + relu(BN(A h_i + B h_j))
//! ```

use super::graph::Graph;
use super::layer::{apply_site, BatchNorm, LayerConfig, Linear, Regularizer, SsfgPlacement};
use crate::autodiff::{ParamStore, Phase, ReduceKind, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const GATE_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GatedGcnParams<T> {
    pub u: Linear,
    pub v: Linear,
    pub a: Linear,
    pub b: Linear,
    pub bn_node: Option<BatchNorm<T>>,
    pub bn_edge: Option<BatchNorm<T>>,
}

impl<T: Scalar> GatedGcnParams<T> {
    pub fn init(store: &mut ParamStore<T>, name: &str, cfg: &LayerConfig, rng: &mut RngStream) -> Self {
        let (i, o, bias) = (cfg.in_dim, cfg.out_dim, cfg.bias);
        GatedGcnParams {
            u: Linear::init(store, &format!("{name}.U"), i, o, bias, rng),
            v: Linear::init(store, &format!("{name}.V"), i, o, bias, rng),
            a: Linear::init(store, &format!("{name}.A"), i, o, bias, rng),
            b: Linear::init(store, &format!("{name}.B"), i, o, bias, rng),
            bn_node: cfg.batchnorm.then(|| BatchNorm::init(store, &format!("{name}.bn_h"), o)),
            bn_edge: cfg.batchnorm.then(|| BatchNorm::init(store, &format!("{name}.bn_e"), o)),
        }
    }
}

pub struct GatedGcnOutput {
    pub h: Var,
    pub e: Var,
    /// Edge gates `η`, for inspection.
    pub gates: Var,
}

/// `e` holds one row per edge of `g`, with `out_dim` columns.
#[allow(clippy::too_many_arguments)]
pub fn gatedgcn_layer<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    g: &Graph<T>,
    h: Var,
    e: Var,
    params: &mut GatedGcnParams<T>,
    cfg: &LayerConfig,
    sites: &mut [Regularizer],
    phase: Phase,
) -> Result<GatedGcnOutput> {
    if cfg.residual && cfg.in_dim != cfg.out_dim {
        return Err(Error::Config(format!(
            "residual GatedGCN needs in_dim == out_dim, got {} and {}",
            cfg.in_dim, cfg.out_dim
        )));
    }
    let idx = g.edge_index();
    let mut x = h;
    if cfg.ssfg_placement == SsfgPlacement::Input {
        x = apply_site(sites, 0, tape, x, phase)?;
    }
    let uh = params.u.forward(tape, store, x)?;
    let vh = params.v.forward(tape, store, x)?;
    let ah = params.a.forward(tape, store, x)?;
    let bh = params.b.forward(tape, store, x)?;

    let ah_dst = tape.gather_rows(ah, &idx.dst)?;
    let bh_src = tape.gather_rows(bh, &idx.src)?;
    let ab = tape.add(ah_dst, bh_src)?;
    let e_hat = tape.add(ab, e)?;
    let gates = tape.sigmoid(e_hat);

    let vh_src = tape.gather_rows(vh, &idx.src)?;
    let gated = tape.mul(gates, vh_src)?;
    let num = tape.segment_reduce(ReduceKind::Sum, gated, &idx.by_dst)?;
    let agg = if cfg.gate_normalization {
        let den = tape.segment_reduce(ReduceKind::Sum, gates, &idx.by_dst)?;
        let den = tape.add_scalar(den, T::lit(GATE_EPS));
        tape.div(num, den)?
    } else {
        num
    };
    let mut hn = tape.add(uh, agg)?;
    let mut en = ab;
    if let Some(bn) = &mut params.bn_node {
        hn = bn.forward(tape, store, hn, phase)?;
    }
    if let Some(bn) = &mut params.bn_edge {
        en = bn.forward(tape, store, en, phase)?;
    }
    hn = tape.relu(hn);
    en = tape.relu(en);
    if cfg.residual {
        hn = tape.add(h, hn)?;
        en = tape.add(e, en)?;
    }
    if cfg.ssfg_placement == SsfgPlacement::Default {
        hn = apply_site(sites, 0, tape, hn, phase)?;
        en = apply_site(sites, 1, tape, en, phase)?;
    }
    Ok(GatedGcnOutput { h: hn, e: en, gates })
}
