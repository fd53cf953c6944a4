//! Minimal reverse-mode differentiation in double precision.
//!
//! Values are 2-D [`Tensor`]s; a [`Tape`] records operations and
//! backpropagates through them. [`ParamSet`] holds named parameters with
//! Adam state and serializes to a fixed binary checkpoint layout.

mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_graph, rel_error, GradCheckConfig, GradCheckReport};
pub use layers::{dense, pool_mean_max, Activation, Dense, Mlp, MultiHeadAttention};
pub use params::{AdamConfig, Binding, ParamGrads, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tape::softplus;
