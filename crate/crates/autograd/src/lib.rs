//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations needed by volumetric conv/attention encoders are
//! provided: 3D convolution (grouped, strided, padded), channel layer norm,
//! multi-head self-attention, linear layers, pooling and a few pointwise
//! nonlinearities. Every op carries a hand-written adjoint checked against
//! central finite differences in the test suite.

mod graph;
pub mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{attention_weights, conv3d, Conv3dSpec};
pub use tensor::Tensor;
