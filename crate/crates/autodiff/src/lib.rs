//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations eagerly and borrows its trainable values
//! from a [`ParamSet`]. Calling [`Graph::backward`] on a scalar yields
//! [`ParamGrads`] aligned with that set, which [`AdamW`] consumes.

mod check;
mod gemm;
mod graph;
mod optim;
mod params;
mod tensor;

pub use check::max_grad_error;
pub use gemm::gemm;
pub use graph::{Graph, Var};
pub use optim::AdamW;
pub use params::{ParamGrads, ParamId, ParamSet};
pub use tensor::Tensor;
