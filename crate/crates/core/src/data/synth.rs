//! Synthetic token-to-feature corpus. Every token owns a fixed unit-norm
//! prototype; an utterance repeats each token's prototype for a few noisy
//! frames.

use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use crate::data::features::{read_features, write_features};
use crate::data::manifest::{write_manifest, ManifestEntry, Utterance, MIN_FRAMES};
use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numeric::tensor::{argmax, Tensor};
use crate::Rng;

pub const PROTOTYPES_FILE: &str = "prototypes.fea";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_utts: usize,
    /// Number of distinct tokens `K`; the vocabulary has `K + 2` entries.
    pub vocab_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub n_mels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_utts: 2000,
            vocab_size: 50,
            min_tokens: 8,
            max_tokens: 20,
            min_frames_per_token: 4,
            max_frames_per_token: 8,
            noise: 0.1,
            n_mels: 80,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.vocab_size < 2 {
            return err("vocab_size", "at least 2 tokens are required");
        }
        if self.min_frames_per_token < 1 || self.min_frames_per_token > self.max_frames_per_token {
            return err("frames_per_token", "need 1 <= min <= max");
        }
        if self.min_tokens < 1 || self.min_tokens > self.max_tokens {
            return err("tokens", "need 1 <= min <= max");
        }
        if self.min_tokens * self.min_frames_per_token < MIN_FRAMES {
            return err("tokens", "shortest utterance would have fewer than 4 frames");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err("noise", "must be finite and non-negative");
        }
        if self.n_mels == 0 {
            return err("n_mels", "must be positive");
        }
        Ok(())
    }
}

/// Display character of token `k`: `a-z`, `A-Z`, `0-9`, then CJK
/// ideographs from U+4E00.
pub fn token_char(k: usize) -> char {
    const ASCII: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    ASCII
        .chars()
        .nth(k)
        .unwrap_or_else(|| char::from_u32(0x4E00 + (k - ASCII.len()) as u32).expect("CJK block"))
}

/// A generated corpus held in memory.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub vocab: Vocabulary,
    /// `[K, n_mels]`; row `k` belongs to vocabulary id `k + 2`.
    pub prototypes: Tensor<f32>,
    pub utterances: Vec<Utterance>,
}

/// Features for `symbols` (prototype rows) with `frames[i]` noisy copies of
/// each.
pub fn render_utterance(
    prototypes: &Tensor<f32>,
    symbols: &[usize],
    frames: &[usize],
    noise: f64,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    if symbols.len() != frames.len() {
        return Err(Error::InvalidArgument(
            "one frame count per symbol is required".into(),
        ));
    }
    let (k, dim) = prototypes.dims2()?;
    let total: usize = frames.iter().sum();
    let mut data = Vec::with_capacity(total * dim);
    for (&s, &r) in symbols.iter().zip(frames) {
        if s >= k {
            return Err(Error::InvalidArgument(format!(
                "symbol {s} outside {k} prototypes"
            )));
        }
        for _ in 0..r {
            for &p in prototypes.row(s) {
                let eps: f64 = rng.sample(StandardNormal);
                data.push((p as f64 + noise * eps) as f32);
            }
        }
    }
    Tensor::new(vec![total, dim], data)
}

/// `n` symbols below `k`, no symbol repeated back to back.
fn draw_symbols(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(n);
    while out.len() < n {
        let s = rng.random_range(0..k);
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(config.seed);
        let (k, dim) = (config.vocab_size, config.n_mels);
        let mut proto = Vec::with_capacity(k * dim);
        for _ in 0..k {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            proto.extend(v.iter().map(|x| (x / norm) as f32));
        }
        let prototypes = Tensor::new(vec![k, dim], proto)?;
        let vocab = Vocabulary::new((0..k).map(|i| token_char(i).to_string()))?;
        let width = config.num_utts.to_string().len().max(4);
        let mut utterances = Vec::with_capacity(config.num_utts);
        for u in 0..config.num_utts {
            let n = rng.random_range(config.min_tokens..=config.max_tokens);
            let symbols = draw_symbols(n, k, &mut rng);
            let frames: Vec<usize> = (0..n)
                .map(|_| rng.random_range(config.min_frames_per_token..=config.max_frames_per_token))
                .collect();
            let features = render_utterance(&prototypes, &symbols, &frames, config.noise, &mut rng)?;
            utterances.push(Utterance {
                id: format!("utt{u:0width$}"),
                features,
                transcript: symbols.iter().map(|&s| token_char(s)).collect(),
            });
        }
        Ok(SynthCorpus {
            config: config.clone(),
            vocab,
            prototypes,
            utterances,
        })
    }

    /// `count` utterances of exactly `tokens` tokens spread over a fixed
    /// `frames` duration.
    pub fn fixed_duration(
        &self,
        tokens: usize,
        frames: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Utterance>> {
        if tokens == 0 || frames < tokens || frames < MIN_FRAMES {
            return Err(Error::InvalidArgument(format!(
                "cannot spread {tokens} tokens over {frames} frames"
            )));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let per: Vec<usize> = (0..tokens)
            .map(|i| frames / tokens + usize::from(i < frames % tokens))
            .collect();
        (0..count)
            .map(|u| {
                let symbols = draw_symbols(tokens, self.config.vocab_size, &mut rng);
                Ok(Utterance {
                    id: format!("len{tokens}_{u:04}"),
                    features: render_utterance(
                        &self.prototypes,
                        &symbols,
                        &per,
                        self.config.noise,
                        &mut rng,
                    )?,
                    transcript: symbols.iter().map(|&s| token_char(s)).collect(),
                })
            })
            .collect()
    }

    /// Writes `vocab.txt`, `prototypes.fea`, one feature file per
    /// utterance under `feats/`, and a manifest named `manifest` holding
    /// `utterances[range]`. Returns the manifest path.
    pub fn write(&self, dir: &Path, manifest: &str, range: std::ops::Range<usize>) -> Result<PathBuf> {
        let feats = dir.join("feats");
        std::fs::create_dir_all(&feats).map_err(|e| Error::io(format!("creating {}", feats.display()), e))?;
        self.vocab.write(&dir.join(VOCAB_FILE))?;
        write_features(&dir.join(PROTOTYPES_FILE), &self.prototypes)?;
        let mut entries = Vec::with_capacity(range.len());
        for u in &self.utterances[range] {
            let path = feats.join(format!("{}.fea", u.id));
            write_features(&path, &u.features)?;
            entries.push(ManifestEntry {
                id: u.id.clone(),
                features: path,
                transcript: u.transcript.clone(),
            });
        }
        let path = dir.join(manifest);
        write_manifest(&path, &entries)?;
        Ok(path)
    }
}

/// Loads the prototypes written next to a synthetic corpus.
pub fn read_prototypes(dir: &Path) -> Result<Tensor<f32>> {
    read_features(&dir.join(PROTOTYPES_FILE))
}

/// Independent reference decoder: labels every frame with its nearest
/// prototype and collapses runs. Returns vocabulary ids.
pub fn oracle_decode(features: &Tensor<f32>, prototypes: &Tensor<f32>) -> Result<Vec<usize>> {
    let (_, dim) = features.dims2()?;
    let (_, pdim) = prototypes.dims2()?;
    if dim != pdim {
        return Err(Error::ShapeMismatch {
            op: "oracle_decode",
            lhs: features.shape().to_vec(),
            rhs: prototypes.shape().to_vec(),
        });
    }
    let mut out: Vec<usize> = Vec::new();
    for frame in features.rows() {
        let neg_dist: Vec<f64> = prototypes
            .rows()
            .map(|p| {
                -frame
                    .iter()
                    .zip(p)
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
            })
            .collect();
        let id = argmax(&neg_dist) + 2;
        if out.last() != Some(&id) {
            out.push(id);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            num_utts: 20,
            vocab_size: 8,
            min_tokens: 2,
            max_tokens: 5,
            min_frames_per_token: 2,
            max_frames_per_token: 4,
            noise,
            n_mels: 16,
            seed,
        }
    }

    #[test]
    fn token_chars_are_distinct() {
        let chars: std::collections::HashSet<char> = (0..200).map(token_char).collect();
        assert_eq!(chars.len(), 200);
        assert_eq!(token_char(0), 'a');
        assert_eq!(token_char(62), '\u{4E00}');
    }

    #[test]
    fn prototypes_are_unit_norm_and_transcripts_fit_ranges() {
        let c = SynthCorpus::generate(&small(0.1, 3)).unwrap();
        for row in c.prototypes.rows() {
            let n: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        for u in &c.utterances {
            let n = u.token_len();
            assert!((2..=5).contains(&n));
            assert!((2 * n..=4 * n).contains(&u.frames()));
            let chars: Vec<char> = u.transcript.chars().collect();
            assert!(chars.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn noiseless_fixed_rate_is_exact_repetition() {
        let mut cfg = small(0.0, 5);
        cfg.max_frames_per_token = 2;
        let c = SynthCorpus::generate(&cfg).unwrap();
        for u in &c.utterances {
            let ids = c.vocab.encode(&u.transcript);
            for (t, frame) in u.features.rows().enumerate() {
                assert_eq!(frame, c.prototypes.row(ids[t / 2] - 2));
            }
            assert_eq!(oracle_decode(&u.features, &c.prototypes).unwrap(), ids);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = SynthCorpus::generate(&small(0.1, 9)).unwrap();
        let b = SynthCorpus::generate(&small(0.1, 9)).unwrap();
        assert_eq!(a.utterances, b.utterances);
        let c = SynthCorpus::generate(&small(0.1, 10)).unwrap();
        assert_ne!(a.utterances, c.utterances);
    }

    #[test]
    fn precondition_violations_are_rejected() {
        let mut cfg = small(0.1, 0);
        cfg.vocab_size = 1;
        assert!(SynthCorpus::generate(&cfg).is_err());
        let mut cfg = small(0.1, 0);
        cfg.min_frames_per_token = 0;
        assert!(SynthCorpus::generate(&cfg).is_err());
    }

    #[test]
    fn fixed_duration_keeps_frame_count() {
        let c = SynthCorpus::generate(&small(0.1, 1)).unwrap();
        let utts = c.fixed_duration(5, 23, 3, 7).unwrap();
        assert!(utts.iter().all(|u| u.frames() == 23 && u.token_len() == 5));
        assert!(c.fixed_duration(30, 23, 1, 7).is_err());
    }

    #[test]
    fn written_corpus_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let c = SynthCorpus::generate(&small(0.1, 2)).unwrap();
        let m = c.write(dir.path(), "train.tsv", 0..15).unwrap();
        let manifest = crate::data::load_manifest(&m).unwrap();
        assert_eq!(manifest.len(), 15);
        assert_eq!(manifest.load(3, 16, 5).unwrap(), c.utterances[3]);
        assert_eq!(read_prototypes(dir.path()).unwrap(), c.prototypes);
        assert_eq!(Vocabulary::read(&dir.path().join(VOCAB_FILE)).unwrap(), c.vocab);
    }
}
