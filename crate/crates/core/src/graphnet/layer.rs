//! Layer configuration and the building blocks shared by all layer kinds.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormState, ParamId, ParamStore, Phase, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::ssfg::{dropout_apply, ssfg_apply, DropoutConfig, SsfgConfig, SsfgSite};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Sage,
    Gat,
    GatedGcn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Mean,
    Sum,
}

/// How GAT heads are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    #[default]
    Concat,
    Mean,
}

/// Where a layer's regularization sites sit.
///
/// `Default` is kind-specific: after the activation for Sage, on each head's
/// output for GAT, on both output node and edge features for GatedGCN.
/// `Input` puts a single site on the layer's input node features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsfgPlacement {
    #[default]
    Default,
    Input,
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Attention heads (GAT only).
    pub heads: usize,
    pub head_merge: HeadMerge,
    /// Neighbor aggregator (Sage only).
    pub aggregator: Aggregator,
    pub residual: bool,
    pub batchnorm: bool,
    pub bias: bool,
    /// Divide gated messages by the gate sum (GatedGCN only).
    pub gate_normalization: bool,
    pub ssfg_placement: SsfgPlacement,
}

impl LayerConfig {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        LayerConfig {
            kind,
            in_dim,
            out_dim,
            heads: 1,
            head_merge: HeadMerge::Concat,
            aggregator: Aggregator::Mean,
            residual: true,
            batchnorm: true,
            bias: true,
            gate_normalization: true,
            ssfg_placement: SsfgPlacement::Default,
        }
    }

    /// No residual, no batch norm: the bare layer equation.
    pub fn plain(mut self) -> Self {
        self.residual = false;
        self.batchnorm = false;
        self
    }

    pub fn with_heads(mut self, heads: usize, merge: HeadMerge) -> Self {
        self.heads = heads;
        self.head_merge = merge;
        self
    }

    /// Output width of each GAT head.
    pub fn head_dim(&self) -> usize {
        match self.head_merge {
            HeadMerge::Concat => self.out_dim / self.heads.max(1),
            HeadMerge::Mean => self.out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if self.residual && self.in_dim != self.out_dim {
            return Err(Error::Config(format!(
                "residual connection needs in_dim == out_dim, got {} and {}",
                self.in_dim, self.out_dim
            )));
        }
        if self.kind == LayerKind::Gat {
            if self.heads == 0 {
                return Err(Error::Config("GAT needs at least one head".into()));
            }
            if self.head_merge == HeadMerge::Concat && self.out_dim % self.heads != 0 {
                return Err(Error::Config(format!(
                    "GAT out_dim {} not divisible by {} heads",
                    self.out_dim, self.heads
                )));
            }
        }
        Ok(())
    }

    /// Number of regularization sites this layer owns.
    pub fn num_sites(&self) -> usize {
        match (self.ssfg_placement, self.kind) {
            (SsfgPlacement::Disabled, _) => 0,
            (SsfgPlacement::Input, _) => 1,
            (SsfgPlacement::Default, LayerKind::Sage) => 1,
            (SsfgPlacement::Default, LayerKind::Gat) => self.heads,
            (SsfgPlacement::Default, LayerKind::GatedGcn) => 2,
        }
    }
}

/// Weight `in × out` and optional bias `[out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Weights uniform in `±1/√in`, bias zero.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut RngStream,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(&[in_dim, out_dim], in_dim, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| T::lit(rng.uniform_range(-bound, bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Learnable scale/shift plus running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BatchNormState<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn init(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            state: BatchNormState::new(dim),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, phase: Phase) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, &mut self.state, phase)
    }
}

/// One regularization site: optional stochastic scaling followed by
/// optional dropout.
pub struct Regularizer {
    ssfg: Option<SsfgSite>,
    dropout: Option<(DropoutConfig, RngStream)>,
}

impl Regularizer {
    pub fn new(ssfg: SsfgConfig, dropout: Option<DropoutConfig>, rng: &RngStream, name: &str) -> Self {
        Regularizer {
            ssfg: Some(SsfgSite::new(ssfg, rng, name)),
            dropout: dropout.map(|d| (d, rng.derive(&format!("{name}.dropout"), 0))),
        }
    }

    pub fn identity() -> Self {
        Regularizer {
            ssfg: None,
            dropout: None,
        }
    }

    pub fn ssfg_site(&mut self) -> Option<&mut SsfgSite> {
        self.ssfg.as_mut()
    }

    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var, phase: Phase) -> Result<Var> {
        let mut y = x;
        if let Some(site) = &mut self.ssfg {
            y = ssfg_apply(tape, y, site, phase)?;
        }
        if let Some((cfg, rng)) = &mut self.dropout {
            y = dropout_apply(tape, y, *cfg, phase, rng)?;
        }
        Ok(y)
    }
}

/// Applies site `k` if the layer has one, otherwise passes `x` through.
pub(crate) fn apply_site<T: Scalar>(
    sites: &mut [Regularizer],
    k: usize,
    tape: &mut Tape<T>,
    x: Var,
    phase: Phase,
) -> Result<Var> {
    match sites.get_mut(k) {
        Some(r) => r.apply(tape, x, phase),
        None => Ok(x),
    }
}
