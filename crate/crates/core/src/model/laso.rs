use rand::SeedableRng;

use crate::blocks::{position_encoding, AttentionBlock, LayerNorm, Linear, Subsampler};
use crate::data::{pad_targets, Cmvn};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, ModelKind};
use crate::model::{LossScope, LossTerm, Seq2Seq};
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::ParamSet;
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::{argmax, Tensor};
use crate::Rng;

/// Encoder, position-dependent summarizer (PDS) and decoder producing `L`
/// independent per-position token distributions in one pass.
#[derive(Clone, Debug)]
pub struct LasoModel<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    cmvn: Option<Cmvn>,
    subsampler: Subsampler,
    encoder: Vec<AttentionBlock>,
    encoder_norm: LayerNorm,
    pds: Vec<AttentionBlock>,
    pds_norm: LayerNorm,
    decoder: Vec<AttentionBlock>,
    decoder_norm: LayerNorm,
    output: Linear,
}

/// Graph handles of one forward pass.
pub struct LasoPass {
    pub logits: Var,
    /// Per summarizer block, per head: `[L, T']` attention scores.
    pub pds_scores: Vec<Vec<Var>>,
}

impl<T: Scalar> LasoModel<T> {
    /// Freshly initialized model; the same seed yields the same weights in
    /// every precision.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = &config;
        let block = |params: &mut ParamSet<T>, name: String, rng: &mut Rng| {
            AttentionBlock::new(
                params, &name, c.d_model, c.heads, c.d_ff, c.dropout, c.ln_eps, rng,
            )
        };
        let subsampler = Subsampler::new(&mut params, "encoder.subsample", c.subsampler(), &mut rng)?;
        let encoder = (0..c.encoder_blocks)
            .map(|i| block(&mut params, format!("encoder.block{i}"), &mut rng))
            .collect::<Result<_>>()?;
        let encoder_norm = LayerNorm::new(&mut params, "encoder.norm", c.d_model, c.ln_eps)?;
        let pds = (0..c.pds_blocks)
            .map(|i| block(&mut params, format!("pds.block{i}"), &mut rng))
            .collect::<Result<_>>()?;
        let pds_norm = LayerNorm::new(&mut params, "pds.norm", c.d_model, c.ln_eps)?;
        let decoder = (0..c.decoder_blocks)
            .map(|i| block(&mut params, format!("decoder.block{i}"), &mut rng))
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::new(&mut params, "decoder.norm", c.d_model, c.ln_eps)?;
        let output = Linear::new(&mut params, "output", c.d_model, c.vocab_size, true, &mut rng)?;
        Ok(LasoModel {
            config,
            params,
            cmvn: None,
            subsampler,
            encoder,
            encoder_norm,
            pds,
            pds_norm,
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

    pub fn pds_blocks(&self) -> &[AttentionBlock] {
        &self.pds
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Same architecture in another precision.
    pub fn cast<U: Scalar>(&self) -> LasoModel<U> {
        LasoModel {
            config: self.config.clone(),
            params: self.params.cast(),
            cmvn: self.cmvn.clone(),
            subsampler: self.subsampler.clone(),
            encoder: self.encoder.clone(),
            encoder_norm: self.encoder_norm.clone(),
            pds: self.pds.clone(),
            pds_norm: self.pds_norm.clone(),
            decoder: self.decoder.clone(),
            decoder_norm: self.decoder_norm.clone(),
            output: self.output.clone(),
        }
    }

    /// `[T, n_mels]` features to the `[T', d_model]` representation `z`.
    pub fn encode(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
        let mut x = self.subsampler.forward(g, features, self.config.dropout)?;
        for block in &self.encoder {
            x = block.forward(g, x, None, None)?.0;
        }
        self.encoder_norm.forward(g, x)
    }

    /// Queries `z` once per output slot. The first block's queries are the
    /// position encodings of slots `1..=L`; later blocks query with the
    /// previous block's output. Keys and values are always `z`.
    pub fn summarize(&self, g: &mut Graph<'_, T>, z: Var) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut x = g.constant(position_encoding(self.config.max_len, self.config.d_model)?);
        let mut scores = Vec::with_capacity(self.pds.len());
        for block in &self.pds {
            let (y, s) = block.forward(g, x, Some(z), None)?;
            x = y;
            scores.push(s);
        }
        Ok((self.pds_norm.forward(g, x)?, scores))
    }

    /// Self-attention over the `L` slot representations, then the output
    /// projection to `[L, V]` logits.
    pub fn decode_representation(&self, g: &mut Graph<'_, T>, slots: Var) -> Result<Var> {
        let mut x = slots;
        for block in &self.decoder {
            x = block.forward(g, x, None, None)?.0;
        }
        let x = self.decoder_norm.forward(g, x)?;
        self.output.forward(g, x)
    }

    /// The whole network on one utterance. Only acoustic features enter the
    /// graph.
    pub fn pass(&self, g: &mut Graph<'_, T>, features: Var) -> Result<LasoPass> {
        let z = self.encode(g, features)?;
        let (slots, pds_scores) = self.summarize(g, z)?;
        let logits = self.decode_representation(g, slots)?;
        Ok(LasoPass { logits, pds_scores })
    }

    /// Per-position distributions `[L, V]` for one utterance (inference).
    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params).no_grad();
        let x = g.constant(self.prepare(features)?);
        let pass = self.pass(&mut g, x)?;
        g.value(pass.logits).softmax(1)
    }

    /// Padded `[B, T_max, n_mels]` features with true frame counts to
    /// `[B, L, V]` distributions. Each utterance only ever sees its own
    /// frames, so padding never leaks into attention.
    pub fn forward_batch(&self, features: &Tensor<T>, lengths: &[usize]) -> Result<Tensor<T>> {
        let &[b, t_max, mels] = features.shape() else {
            return Err(Error::InvalidShape {
                op: "forward_batch",
                shape: features.shape().to_vec(),
                reason: "expected [batch, frames, n_mels]".into(),
            });
        };
        if lengths.len() != b || lengths.iter().any(|&n| n == 0 || n > t_max) {
            return Err(Error::InvalidArgument(format!(
                "lengths {lengths:?} for batch of {b} x {t_max} frames"
            )));
        }
        let mut out = Vec::with_capacity(b * self.config.max_len * self.config.vocab_size);
        for (i, &n) in lengths.iter().enumerate() {
            let start = i * t_max * mels;
            let utt = Tensor::new(vec![n, mels], features.data()[start..start + n * mels].to_vec())?;
            out.extend_from_slice(self.forward(&utt)?.data());
        }
        Tensor::new(vec![b, self.config.max_len, self.config.vocab_size], out)
    }

    /// Head-wise summarizer attention scores for every block:
    /// `result[block][head]` is `[L, T']`.
    pub fn pds_attention(&self, features: &Tensor<T>) -> Result<Vec<Vec<Tensor<T>>>> {
        let mut g = Graph::new(&self.params).no_grad();
        let x = g.constant(self.prepare(features)?);
        let pass = self.pass(&mut g, x)?;
        Ok(pass
            .pds_scores
            .iter()
            .map(|heads| heads.iter().map(|&s| g.value(s).clone()).collect())
            .collect())
    }
}

impl<T: Scalar> Seq2Seq<T> for LasoModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Laso
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

    /// Position-wise smoothed cross entropy, averaged over the slots in
    /// `scope`.
    fn utterance_loss(
        &self,
        g: &mut Graph<'_, T>,
        features: &Tensor<T>,
        tokens: &[usize],
        scope: LossScope,
    ) -> Result<LossTerm> {
        let mut targets = pad_targets(tokens, self.config.max_len)?;
        let x = g.constant(self.prepare(features)?);
        let pass = self.pass(g, x)?;
        let logits = match scope {
            LossScope::Full => pass.logits,
            LossScope::Transcript => {
                targets.truncate(tokens.len() + 1);
                let rows: Vec<usize> = (0..targets.len()).collect();
                g.gather_rows(pass.logits, &rows)?
            }
        };
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
