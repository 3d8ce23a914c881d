//! Attention blocks and the convolutional front-end.

mod attention;
mod block;
mod feed_forward;
mod linear;
mod position;
mod subsample;

pub use attention::{scaled_dot_attention, AttnMask, MultiHeadAttention};
pub use block::AttentionBlock;
pub use feed_forward::FeedForward;
pub use linear::{init_uniform, LayerNorm, Linear};
pub use position::position_encoding;
pub use subsample::{subsampled_len, Subsampler, SubsamplerConfig};
