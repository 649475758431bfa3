//! Dense `f32` tensors with tape-based reverse-mode differentiation.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] and differentiated with [`Tape::backward`]. Reductions accumulate
//! in `f64`; matrix products go through a blocked `sgemm`.

mod adam;
mod error;
mod gemm;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use ops::{conv_output_dim, BatchNormConfig};
pub use tape::{GradSink, Gradients, Tape, Values, Var};
pub use tensor::Tensor;
