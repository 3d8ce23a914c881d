use serde::{Deserialize, Serialize};

use crate::blocks::SubsamplerConfig;
use crate::error::{Error, Result};

/// Which architecture a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Laso,
    Ar,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Laso => "laso",
            ModelKind::Ar => "ar",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laso" => Ok(ModelKind::Laso),
            "ar" => Ok(ModelKind::Ar),
            other => Err(Error::config("model", format!("unknown model kind {other:?}"))),
        }
    }
}

/// Architecture hyperparameters shared by both model kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    /// Summarizer depth (LASO only).
    pub pds_blocks: usize,
    pub decoder_blocks: usize,
    /// Width after the GLU; the first feed-forward layer is twice as wide.
    pub d_ff: usize,
    /// Output slots `L` (LASO) or maximum transcript length (AR).
    pub max_len: usize,
    /// Vocabulary size including `<unk>` and `<eos>`.
    pub vocab_size: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub n_mels: usize,
    pub conv_channels: usize,
    pub freq_stride: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::base(4233)
    }
}

impl ModelConfig {
    /// 512-wide configuration.
    pub fn base(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 512,
            heads: 8,
            encoder_blocks: 6,
            pds_blocks: 4,
            decoder_blocks: 6,
            d_ff: 2048,
            max_len: 60,
            vocab_size,
            dropout: 0.1,
            label_smoothing: 0.1,
            n_mels: 80,
            conv_channels: 32,
            freq_stride: 2,
            ln_eps: 1e-5,
        }
    }

    /// 768-wide configuration.
    pub fn big(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 768,
            ..ModelConfig::base(vocab_size)
        }
    }

    /// Desk-scale configuration: width 64, 4 heads, two encoder and decoder
    /// blocks, one summarizer block, 12 output slots, 20 tokens.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            encoder_blocks: 2,
            pds_blocks: 1,
            decoder_blocks: 2,
            d_ff: 256,
            max_len: 12,
            vocab_size: 20,
            ..ModelConfig::base(20)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: String| Err(Error::config(field, reason));
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return fail(
                "d_model",
                format!("must be positive and even, got {}", self.d_model),
            );
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(
                "heads",
                format!("d_model {} not divisible by {} heads", self.d_model, self.heads),
            );
        }
        if !(1..=4).contains(&self.pds_blocks) {
            return fail("pds_blocks", format!("must be in 1..=4, got {}", self.pds_blocks));
        }
        if self.d_ff == 0 {
            return fail("d_ff", "must be positive".into());
        }
        if self.max_len == 0 {
            return fail("max_len", "must be at least 1".into());
        }
        if self.vocab_size < 3 {
            return fail(
                "vocab_size",
                format!("must be at least 3, got {}", self.vocab_size),
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", format!("must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail(
                "label_smoothing",
                format!("must be in [0, 1), got {}", self.label_smoothing),
            );
        }
        if self.n_mels == 0 || self.conv_channels == 0 {
            return fail(
                "n_mels",
                "feature width and conv channels must be positive".into(),
            );
        }
        if !(1..=2).contains(&self.freq_stride) {
            return fail("freq_stride", format!("must be 1 or 2, got {}", self.freq_stride));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return fail("ln_eps", "must be positive".into());
        }
        Ok(())
    }

    pub fn subsampler(&self) -> SubsamplerConfig {
        SubsamplerConfig {
            n_mels: self.n_mels,
            channels: self.conv_channels,
            freq_stride: self.freq_stride,
            d_model: self.d_model,
        }
    }

    /// Whether two configurations agree on widths, input front end and
    /// encoder depth.
    pub fn same_width(&self, other: &ModelConfig) -> bool {
        self.d_model == other.d_model
            && self.encoder_blocks == other.encoder_blocks
            && self.heads == other.heads
            && self.d_ff == other.d_ff
            && self.n_mels == other.n_mels
            && self.conv_channels == other.conv_channels
            && self.freq_stride == other.freq_stride
            && self.vocab_size == other.vocab_size
    }
}
