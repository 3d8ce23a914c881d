use std::path::Path;
use std::time::Instant;

use crate::data::{Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::model::{beam_search, ArModel, BeamConfig, LasoModel};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::{argmax, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Cut the prediction at the first `<eos>` instead of removing every
    /// `<eos>`.
    pub truncate_at_first_eos: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub id: String,
    /// Hypothesis with every `<eos>` removed.
    pub text: String,
    pub tokens: Vec<usize>,
    /// Winning probability at each output position (empty for beam search).
    pub position_probs: Vec<f64>,
    /// Model forward passes and search.
    pub decode_seconds: f64,
    /// Conversion of stored features into the model's input tensor.
    pub preprocess_seconds: f64,
}

impl DecodeResult {
    pub fn total_seconds(&self) -> f64 {
        self.decode_seconds + self.preprocess_seconds
    }
}

/// Removes `<eos>` fillers from per-position predictions.
pub fn strip_fillers(ids: &[usize], truncate_at_first: bool) -> Vec<usize> {
    if truncate_at_first {
        ids.iter().copied().take_while(|&t| t != EOS).collect()
    } else {
        ids.iter().copied().filter(|&t| t != EOS).collect()
    }
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE)
}

fn prepare<T: Scalar>(features: &Tensor<f32>, n_mels: usize) -> Result<Tensor<T>> {
    let (_, cols) = features.dims2()?;
    if cols != n_mels {
        return Err(Error::ShapeMismatch {
            op: "decode",
            lhs: features.shape().to_vec(),
            rhs: vec![features.shape()[0], n_mels],
        });
    }
    Ok(features.cast())
}

/// One forward pass, a per-position argmax (lowest id on ties), then
/// filler removal.
pub fn greedy_decode<T: Scalar>(
    model: &LasoModel<T>,
    id: &str,
    features: &Tensor<f32>,
    vocab: &Vocabulary,
    opts: DecodeOptions,
) -> Result<DecodeResult> {
    let t0 = Instant::now();
    let x = prepare::<T>(features, model.config().n_mels)?;
    let preprocess_seconds = seconds_since(t0);
    let t1 = Instant::now();
    let probs = model.forward(&x)?;
    let (ids, position_probs): (Vec<usize>, Vec<f64>) = probs
        .rows()
        .map(|row| {
            let k = argmax(row);
            (k, row[k].to_f64_lossy())
        })
        .unzip();
    let tokens = strip_fillers(&ids, opts.truncate_at_first_eos);
    let decode_seconds = seconds_since(t1);
    Ok(DecodeResult {
        id: id.to_string(),
        text: vocab.decode(&tokens),
        tokens,
        position_probs,
        decode_seconds,
        preprocess_seconds,
    })
}

/// Encoder pass plus beam search with the autoregressive decoder.
pub fn beam_decode<T: Scalar>(
    model: &ArModel<T>,
    id: &str,
    features: &Tensor<f32>,
    vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<DecodeResult> {
    let t0 = Instant::now();
    let x = prepare::<T>(features, model.config().n_mels)?;
    let preprocess_seconds = seconds_since(t0);
    let t1 = Instant::now();
    let memory = model.encode_features(&x)?;
    let result = beam_search(&mut model.scorer(&memory), beam)?;
    let tokens = strip_fillers(&result.best.tokens, false);
    let decode_seconds = seconds_since(t1);
    Ok(DecodeResult {
        id: id.to_string(),
        text: vocab.decode(&tokens),
        tokens,
        position_probs: Vec::new(),
        decode_seconds,
        preprocess_seconds,
    })
}

/// `id<TAB>hypothesis` per line.
pub fn write_hypotheses(path: &Path, results: &[DecodeResult]) -> Result<()> {
    let text: String = results
        .iter()
        .map(|r| format!("{}\t{}\n", r.id, r.text))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
