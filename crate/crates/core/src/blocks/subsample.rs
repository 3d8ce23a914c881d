use crate::blocks::linear::{init_uniform, Linear};
use crate::blocks::position::position_encoding;
use crate::error::{Error, Result};
use crate::numeric::conv_out_len;
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::{ParamId, ParamSet};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubsamplerConfig {
    pub n_mels: usize,
    pub channels: usize,
    /// Frequency-axis stride (1 or 2); the time stride is always 2.
    pub freq_stride: usize,
    pub d_model: usize,
}

/// Frames left after both stride-2 time convolutions.
pub fn subsampled_len(frames: usize) -> usize {
    conv_out_len(conv_out_len(frames, 2), 2)
}

/// Two ReLU 3x3 convolutions over the (time x frequency) map, a linear
/// projection of each frame's channels to `d_model` scaled by
/// `sqrt(d_model)`, and additive sinusoidal position encodings.
#[derive(Clone, Debug)]
pub struct Subsampler {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub proj: Linear,
    pub config: SubsamplerConfig,
}

impl Subsampler {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        config: SubsamplerConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let c = config.channels;
        let conv1_w = params.add(format!("{name}.conv1.w"), init_uniform(&[c, 1, 3, 3], 9, rng))?;
        let conv1_b = params.add(format!("{name}.conv1.b"), Tensor::zeros(&[c]))?;
        let conv2_w = params.add(format!("{name}.conv2.w"), init_uniform(&[c, c, 3, 3], c * 9, rng))?;
        let conv2_b = params.add(format!("{name}.conv2.b"), Tensor::zeros(&[c]))?;
        let freq = conv_out_len(
            conv_out_len(config.n_mels, config.freq_stride),
            config.freq_stride,
        );
        let proj = Linear::new(
            params,
            &format!("{name}.proj"),
            c * freq,
            config.d_model,
            true,
            rng,
        )?;
        Ok(Subsampler {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            proj,
            config,
        })
    }

    /// `[T, n_mels]` features to `[T', d_model]` with `T' = subsampled_len(T)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, features: Var, dropout: f64) -> Result<Var> {
        let (frames, mels) = g.value(features).dims2()?;
        if frames < 4 {
            return Err(Error::InvalidArgument(format!(
                "{frames} frames is too short for two stride-2 convolutions (need >= 4)"
            )));
        }
        if mels != self.config.n_mels {
            return Err(Error::ShapeMismatch {
                op: "subsample",
                lhs: vec![frames, mels],
                rhs: vec![frames, self.config.n_mels],
            });
        }
        let stride = (2, self.config.freq_stride);
        let x = g.reshape(features, &[1, frames, mels])?;
        let (w1, b1) = (g.param(self.conv1_w), g.param(self.conv1_b));
        let x = g.conv2d(x, w1, Some(b1), stride)?;
        let x = g.relu(x)?;
        let (w2, b2) = (g.param(self.conv2_w), g.param(self.conv2_b));
        let x = g.conv2d(x, w2, Some(b2), stride)?;
        let x = g.relu(x)?;
        let x = g.channels_to_frames(x)?;
        let x = self.proj.forward(g, x)?;
        let x = g.scale(x, T::of((self.config.d_model as f64).sqrt()))?;
        let t = g.value(x).shape()[0];
        let pe = g.constant(position_encoding(t, self.config.d_model)?);
        let x = g.add(x, pe)?;
        g.dropout(x, dropout)
    }
}
