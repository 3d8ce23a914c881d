//! Dense tensors, reverse-mode differentiation, and optimization.

pub mod gradcheck;
pub mod graph;
pub(crate) mod kernels;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use kernels::{conv_out_len, MASK_LOGIT};
