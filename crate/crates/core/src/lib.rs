//! One-pass non-autoregressive speech recognition.
//!
//! An encoder turns acoustic feature frames into hidden representations, a
//! position-dependent summarizer queries them once per output slot using
//! sinusoidal position encodings, and a decoder refines the slots before a
//! per-position softmax. Decoding is a single forward pass followed by a
//! per-position argmax. An autoregressive encoder-decoder with beam search
//! is included as the latency baseline.
//!
//! All math is generic over [`Scalar`] (`f32` for training and inference,
//! `f64` for gradient checking); the aliases at the crate root name the
//! usual instantiations.

pub mod blocks;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod train;

pub use data::{Vocabulary, EOS, UNK};
pub use error::{Error, Result};
pub use model::{ArModel, LasoModel, ModelConfig, ModelKind};
pub use numeric::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use numeric::graph::{Backward, Graph, Var};
pub use numeric::optim::{adam_step, AdamState};
pub use numeric::param::{Gradients, ParamId, ParamSet, Parameter};
pub use numeric::scalar::Scalar;
pub use numeric::tensor::Tensor;
pub use train::{Checkpoint, TrainConfig, Trainer};

/// Seedable generator threaded through initialization, dropout, masking and
/// corpus synthesis.
pub type Rng = rand_chacha::ChaCha8Rng;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type LasoModel32 = LasoModel<f32>;
pub type LasoModel64 = LasoModel<f64>;
pub type ArModel32 = ArModel<f32>;
pub type ArModel64 = ArModel<f64>;
