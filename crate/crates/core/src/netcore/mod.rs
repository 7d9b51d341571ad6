//! Minimal deterministic numerics: tensors, the conv1d/dense/ReLU/sigmoid
//! layer set, reverse-mode gradients and Adam.

mod graph;
mod init;
pub mod ops;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use init::he_uniform;
pub use ops::{bce_loss, conv1d_forward, dense_forward, mse_loss, relu, sigmoid, sigmoid_scalar, BCE_EPS};
pub use params::{AdamConfig, ParamId, ParameterSet};
pub use tensor::Tensor;
