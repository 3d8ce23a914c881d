use rand::SeedableRng;

use crate::blocks::{
    init_uniform, position_encoding, AttnMask, FeedForward, LayerNorm, Linear, MultiHeadAttention, Subsampler,
};
use crate::data::{Cmvn, EOS};
use crate::error::{Error, Result};
use crate::model::beam::StepScorer;
use crate::model::config::{ModelConfig, ModelKind};
use crate::model::{LossScope, LossTerm, Seq2Seq};
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::{ParamId, ParamSet};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::{argmax, Tensor};
use crate::Rng;

/// Pre-norm decoder block: causal self-attention, cross-attention to the
/// encoder output, feed-forward.
#[derive(Clone, Debug)]
struct ArDecoderBlock {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn: FeedForward,
    dropout: f64,
}

impl ArDecoderBlock {
    fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, c: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(ArDecoderBlock {
            self_norm: LayerNorm::new(params, &format!("{name}.self_norm"), c.d_model, c.ln_eps)?,
            self_attn: MultiHeadAttention::new(
                params,
                &format!("{name}.self_attn"),
                c.d_model,
                c.heads,
                rng,
            )?,
            cross_norm: LayerNorm::new(params, &format!("{name}.cross_norm"), c.d_model, c.ln_eps)?,
            cross_attn: MultiHeadAttention::new(
                params,
                &format!("{name}.cross_attn"),
                c.d_model,
                c.heads,
                rng,
            )?,
            ffn_norm: LayerNorm::new(params, &format!("{name}.ffn_norm"), c.d_model, c.ln_eps)?,
            ffn: FeedForward::new(params, &format!("{name}.ffn"), c.d_model, c.d_ff, rng)?,
            dropout: c.dropout,
        })
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        memory: Var,
        causal: &AttnMask,
    ) -> Result<Var> {
        let a = self.self_norm.forward(g, x)?;
        let (a, _) = self.self_attn.forward(g, a, a, a, Some(causal))?;
        let a = g.dropout(a, self.dropout)?;
        let x = g.add(x, a)?;
        let q = self.cross_norm.forward(g, x)?;
        let m = self.cross_norm.forward(g, memory)?;
        let (c, _) = self.cross_attn.forward(g, q, m, m, None)?;
        let c = g.dropout(c, self.dropout)?;
        let x = g.add(x, c)?;
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        g.add(x, h)
    }
}

/// Autoregressive encoder-decoder baseline: the same encoder as
/// [`crate::LasoModel`], a causal decoder with cross-attention, and
/// chain-rule decoding by beam search. `<eos>` doubles as the start symbol.
#[derive(Clone, Debug)]
pub struct ArModel<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    cmvn: Option<Cmvn>,
    subsampler: Subsampler,
    encoder: Vec<crate::blocks::AttentionBlock>,
    encoder_norm: LayerNorm,
    embedding: ParamId,
    decoder: Vec<ArDecoderBlock>,
    decoder_norm: LayerNorm,
    output: Linear,
}

impl<T: Scalar> ArModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = &config;
        let subsampler = Subsampler::new(&mut params, "encoder.subsample", c.subsampler(), &mut rng)?;
        let encoder = (0..c.encoder_blocks)
            .map(|i| {
                crate::blocks::AttentionBlock::new(
                    &mut params,
                    &format!("encoder.block{i}"),
                    c.d_model,
                    c.heads,
                    c.d_ff,
                    c.dropout,
                    c.ln_eps,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let encoder_norm = LayerNorm::new(&mut params, "encoder.norm", c.d_model, c.ln_eps)?;
        let embedding = params.add(
            "decoder.embedding",
            init_uniform(&[c.vocab_size, c.d_model], 1, &mut rng),
        )?;
        let decoder = (0..c.decoder_blocks)
            .map(|i| ArDecoderBlock::new(&mut params, &format!("decoder.block{i}"), c, &mut rng))
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::new(&mut params, "decoder.norm", c.d_model, c.ln_eps)?;
        let output = Linear::new(&mut params, "output", c.d_model, c.vocab_size, true, &mut rng)?;
        Ok(ArModel {
            config,
            params,
            cmvn: None,
            subsampler,
            encoder,
            encoder_norm,
            embedding,
            decoder,
            decoder_norm,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Input normalization applied to raw features before the subsampler.
    pub fn cmvn(&self) -> Option<&Cmvn> {
        self.cmvn.as_ref()
    }

    pub fn set_cmvn(&mut self, cmvn: Option<Cmvn>) -> Result<()> {
        if let Some(c) = &cmvn {
            if c.dim() != self.config.n_mels {
                return Err(Error::InvalidArgument(format!(
                    "normalization for {} features, model expects {}",
                    c.dim(),
                    self.config.n_mels
                )));
            }
        }
        self.cmvn = cmvn;
        Ok(())
    }

    /// Raw features as the network sees them.
    pub fn prepare(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.cmvn {
            Some(c) => c.apply(features),
            None => Ok(features.clone()),
        }
    }

    /// Longest decoder input accepted: the start symbol plus `max_len`
    /// tokens.
    pub fn max_prefix(&self) -> usize {
        self.config.max_len + 1
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
        let mut x = self.subsampler.forward(g, features, self.config.dropout)?;
        for block in &self.encoder {
            x = block.forward(g, x, None, None)?.0;
        }
        self.encoder_norm.forward(g, x)
    }

    /// Encoder output for one utterance (inference).
    pub fn encode_features(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params).no_grad();
        let x = g.constant(self.prepare(features)?);
        let z = self.encode(&mut g, x)?;
        Ok(g.value(z).clone())
    }

    /// Teacher-forced decoder logits `[n, V]` for inputs `ids`; row `i`
    /// depends only on `ids[..=i]`.
    pub fn decoder_logits(&self, g: &mut Graph<'_, T>, ids: &[usize], memory: Var) -> Result<Var> {
        if ids.is_empty() || ids.len() > self.max_prefix() {
            return Err(Error::InvalidArgument(format!(
                "decoder input of {} tokens (limit {})",
                ids.len(),
                self.max_prefix()
            )));
        }
        let table = g.param(self.embedding);
        let x = g.gather_rows(table, ids)?;
        let pe = g.constant(position_encoding(ids.len(), self.config.d_model)?);
        let mut x = g.add(x, pe)?;
        x = g.dropout(x, self.config.dropout)?;
        let causal = AttnMask::causal(ids.len());
        for block in &self.decoder {
            x = block.forward(g, x, memory, &causal)?;
        }
        let x = self.decoder_norm.forward(g, x)?;
        self.output.forward(g, x)
    }

    /// `P(y_i | y_<i, x)`: distribution over the next token after `prefix`
    /// given encoder output `memory`.
    pub fn ar_forward_step(&self, prefix: &[usize], memory: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.next_logits(prefix, memory)?;
        logits.softmax(0)
    }

    fn next_logits(&self, prefix: &[usize], memory: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params).no_grad();
        let m = g.constant(memory.clone());
        let table = g.param(self.embedding);
        if prefix.is_empty() || prefix.len() > self.max_prefix() {
            return Err(Error::InvalidArgument(format!(
                "prefix of {} tokens (limit {})",
                prefix.len(),
                self.max_prefix()
            )));
        }
        let x = g.gather_rows(table, prefix)?;
        let pe = g.constant(position_encoding(prefix.len(), self.config.d_model)?);
        let mut x = g.add(x, pe)?;
        let causal = AttnMask::causal(prefix.len());
        for block in &self.decoder {
            x = block.forward(&mut g, x, m, &causal)?;
        }
        // Only the newest position feeds the output layer.
        let last = g.gather_rows(x, &[prefix.len() - 1])?;
        let last = self.decoder_norm.forward(&mut g, last)?;
        let logits = self.output.forward(&mut g, last)?;
        let row = g.value(logits).data().to_vec();
        Tensor::new(vec![row.len()], row)
    }

    /// Step scorer bound to one utterance's encoder output.
    pub fn scorer<'a>(&'a self, memory: &'a Tensor<T>) -> ArScorer<'a, T> {
        ArScorer { model: self, memory }
    }
}

/// Next-token log-probabilities of an [`ArModel`] for a fixed utterance.
pub struct ArScorer<'a, T> {
    model: &'a ArModel<T>,
    memory: &'a Tensor<T>,
}

impl<T: Scalar> StepScorer for ArScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.model.next_logits(prefix, self.memory)?.to_f64_vec();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        Ok(logits.into_iter().map(|z| z - lse).collect())
    }
}

impl<T: Scalar> Seq2Seq<T> for ArModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Ar
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn cmvn(&self) -> Option<&Cmvn> {
        self.cmvn.as_ref()
    }

    /// Teacher forcing: inputs `<eos> y_1 .. y_n`, targets `y_1 .. y_n <eos>`.
    fn utterance_loss(
        &self,
        g: &mut Graph<'_, T>,
        features: &Tensor<T>,
        tokens: &[usize],
        _scope: LossScope,
    ) -> Result<LossTerm> {
        if tokens.len() > self.config.max_len {
            return Err(Error::InvalidArgument(format!(
                "transcript of {} tokens exceeds max_len {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        let mut inputs = Vec::with_capacity(tokens.len() + 1);
        inputs.push(EOS);
        inputs.extend_from_slice(tokens);
        let mut targets = tokens.to_vec();
        targets.push(EOS);
        let x = g.constant(self.prepare(features)?);
        let memory = self.encode(g, x)?;
        let logits = self.decoder_logits(g, &inputs, memory)?;
        let loss = g.smoothed_cross_entropy(logits, &targets, self.config.label_smoothing)?;
        let correct = g
            .value(logits)
            .rows()
            .zip(&targets)
            .filter(|(row, &t)| argmax(row) == t)
            .count();
        Ok(LossTerm {
            loss,
            correct,
            total: targets.len(),
        })
    }
}
