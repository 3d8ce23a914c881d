use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::data::manifest::Utterance;
use crate::data::vocab::{encode_targets, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;
use crate::Rng;

/// Groups utterance indices into batches of at most `frame_budget` total
/// frames. Utterances are sorted by length (ties broken by a seeded
/// shuffle) and packed greedily, then the batch order is shuffled.
pub fn make_batches(frames: &[usize], frame_budget: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if let Some((i, &n)) = frames.iter().enumerate().find(|(_, &n)| n > frame_budget) {
        return Err(Error::InvalidArgument(format!(
            "utterance {i} has {n} frames, more than the batch budget of {frame_budget}"
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| frames[i]);
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = 0;
    for i in order {
        if used + frames[i] > frame_budget && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        used += frames[i];
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

/// Padded tensors for a group of utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceBatch {
    /// `[B, T_max, n_mels]`, zero padded.
    pub features: Tensor<f32>,
    pub lengths: Vec<usize>,
    /// `B` rows of `L` ids ending in `<eos>` fillers.
    pub targets: Vec<Vec<usize>>,
    pub ids: Vec<String>,
}

impl UtteranceBatch {
    pub fn collate(utts: &[&Utterance], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let first = utts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mels = first.features.last_dim();
        let t_max = utts.iter().map(|u| u.frames()).max().expect("non-empty");
        let mut data = vec![0.0f32; utts.len() * t_max * mels];
        let mut targets = Vec::with_capacity(utts.len());
        for (b, u) in utts.iter().enumerate() {
            if u.features.last_dim() != mels {
                return Err(Error::ShapeMismatch {
                    op: "collate",
                    lhs: first.features.shape().to_vec(),
                    rhs: u.features.shape().to_vec(),
                });
            }
            let start = b * t_max * mels;
            data[start..start + u.features.numel()].copy_from_slice(u.features.data());
            targets.push(encode_targets(&u.transcript, vocab, max_len)?);
        }
        Ok(UtteranceBatch {
            features: Tensor::new(vec![utts.len(), t_max, mels], data)?,
            lengths: utts.iter().map(|u| u.frames()).collect(),
            targets,
            ids: utts.iter().map(|u| u.id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
