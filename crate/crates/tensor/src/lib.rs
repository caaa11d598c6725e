//! Dense tensors, a recorded computation graph with reverse-mode
//! differentiation, and plain SGD with weight decay.

mod error;
pub mod gradcheck;
mod graph;
pub mod io;
mod kernels;
mod param;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
