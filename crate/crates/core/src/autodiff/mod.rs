//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

pub mod gradcheck;
mod graph;
mod tensor;

pub(crate) use graph::sigmoid;
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
