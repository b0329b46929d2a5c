//! Dense tensors and the linear primitives the energy is built from.
//!
//! Every operator comes with its exact adjoint (`conv2d` / `conv2d_transpose`,
//! `dense` / `dense_transpose`, `maxpool2_at` / `inverse_maxpool2`), which is what
//! makes the state update an exact gradient of the energy.

mod activation;
mod conv;
mod dense;
mod pool;
mod scalar;
mod tensor;

pub use activation::{relu_alpha, relu_alpha_scalar, relu_alpha_sites};
pub use conv::{conv2d, conv2d_transpose, conv2d_weight_grad, flip_kernel, ConvKernel};
pub use dense::{dense, dense_transpose, dense_weight_grad};
pub use pool::{inverse_maxpool2, maxpool2, maxpool2_at, PoolIndices};
pub use scalar::Scalar;
pub use tensor::Tensor;
