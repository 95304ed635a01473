//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! The operator set is deliberately small: what a single-class grid detector,
//! a differentiable patch compositor and their losses need, plus AdamW.

pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use kernels::{Homography, WarpPlan, IDENTITY};
pub use optim::{AdamW, AdamWConfig};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
