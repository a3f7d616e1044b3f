//! Dense tensors, differentiable kernels and a finite-difference checker.

pub mod gradcheck;
mod graph;
pub mod init;
pub mod kernels;
mod param;
mod scalar;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use graph::{Graph, NodeId};
pub use kernels::{cross_entropy, gelu, layer_norm, matmul, softmax};
pub use param::{ParamGrads, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
