//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable node in a computation graph. Operations on
//! tensors that require gradients record their parents, and
//! [`Tensor::backward`] replays the graph in reverse creation order,
//! accumulating gradients into every reachable leaf.
//!
//! Graphs are built from `Rc` nodes and stay on the thread that created
//! them. Values that need to cross threads (parameters, datasets) are held
//! as plain [`TensorData`] buffers and turned into leaves per pass.

mod autograd;
mod data;
mod error;
pub mod gradcheck;
mod kernels;
mod ops;
mod scalar;
mod tensor;

pub use data::TensorData;
pub use error::{Result, TensorError};
pub use gradcheck::{finite_difference_gradient, relative_error, track_relu_margin};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
