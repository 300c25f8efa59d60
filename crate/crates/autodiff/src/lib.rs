//! Small dense-tensor engine with a reverse-mode tape and ADAM.
//!
//! Only the operations the hourglass generator needs are provided:
//! elementwise arithmetic, leaky-ReLU and sigmoid, reductions, 2-D
//! convolution, nearest-neighbour upsampling, channel concatenation and
//! per-channel normalization.

mod adam;
pub mod conv;
mod error;
mod graph;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use scalar::Real;
pub use tensor::Tensor;
