//! Minimal CPU tensor and reverse-mode autodiff engine for the network components.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub(crate) use graph::sigmoid;
pub use optim::{AdamW, AdamWConfig};
pub use params::{Component, Param, ParamId, ParamStore};
pub use tensor::{matmul, Scalar, Tensor};
