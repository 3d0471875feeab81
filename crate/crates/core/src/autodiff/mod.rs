//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation as a node whose parents precede it, so
//! a single reverse sweep computes all gradients. Graph message passing is
//! expressed with [`Tape::gather_rows`] (edge endpoints) and the segment
//! reductions keyed by destination node.

mod batchnorm;
mod param;
mod segment;
mod tape;
mod tensor;

pub use batchnorm::{BatchNormState, Phase, BN_EPS, BN_MOMENTUM};
pub use param::{ParamId, ParamStore, Parameter};
pub use segment::{ReduceKind, Segments};
pub use tape::{BinaryKind, GradHook, Tape, UnaryKind, Var};
pub use tensor::Tensor;

