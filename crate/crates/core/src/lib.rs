//! Graph neural networks regularized by stochastically scaling node features
//! in the forward pass and their gradients in the backward pass.
//!
//! The numeric core ([`autodiff`], [`ssfg`], [`graphnet`], [`diagnostics`]) is
//! generic over the [`Scalar`] element type; the aliases below fix it to
//! `f64`, which is what the training harness and file formats use.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graphnet;
pub mod harness;
pub mod rng;
pub mod scalar;
pub mod ssfg;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Graph = graphnet::Graph<f64>;
pub type Graph32 = graphnet::Graph<f32>;
pub type GraphNet = graphnet::GraphNet<f64>;
pub type GraphNet32 = graphnet::GraphNet<f32>;
