//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use laso::data::{SynthConfig, SynthCorpus};
use laso::model::{BeamConfig, StepScorer};
use laso::{ModelConfig, Result, Scalar, Tensor};
use rand::{Rng as _, SeedableRng};

pub fn rng(seed: u64) -> laso::Rng {
    laso::Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-1, 1)`.
pub fn random<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// The tiny architecture with room for `max_len` tokens over `vocab_size`
/// ids.
pub fn tiny(vocab_size: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        max_len,
        ..ModelConfig::tiny()
    }
}

/// Small corpus of short utterances for quick training checks.
pub fn small_corpus(num_utts: usize, tokens: usize, seed: u64) -> SynthCorpus {
    SynthCorpus::generate(&SynthConfig {
        num_utts,
        vocab_size: tokens,
        min_tokens: 2,
        max_tokens: 6,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Every string one edit away from `s`, never longer than `cap`.
fn edits(s: &[char], alphabet: &[char], cap: usize) -> Vec<Vec<char>> {
    let mut out = Vec::new();
    for i in 0..=s.len() {
        if s.len() < cap {
            for &c in alphabet {
                let mut t = s.to_vec();
                t.insert(i, c);
                out.push(t);
            }
        }
        if i < s.len() {
            let mut t = s.to_vec();
            t.remove(i);
            out.push(t);
            for &c in alphabet {
                let mut t = s.to_vec();
                t[i] = c;
                out.push(t);
            }
        }
    }
    out
}

/// All strings over `alphabet` of length at most `max_len`, and the matrix of
/// single-edit path lengths between them, from one breadth-first search per
/// source over the graph of strings up to `max_len + 1` characters.
pub fn all_pairs_edit_distances(alphabet: &[char], max_len: usize) -> (Vec<Vec<char>>, Vec<Vec<u8>>) {
    let mut strings: Vec<Vec<char>> = vec![vec![]];
    let mut layer: Vec<Vec<char>> = vec![vec![]];
    for _ in 0..=max_len {
        layer = layer
            .iter()
            .flat_map(|s| alphabet.iter().map(move |&c| [s.as_slice(), &[c]].concat()))
            .collect();
        strings.extend(layer.iter().cloned());
    }
    let index: HashMap<&[char], usize> = strings
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_slice(), i))
        .collect();
    let adjacency: Vec<Vec<usize>> = strings
        .iter()
        .map(|s| {
            edits(s, alphabet, max_len + 1)
                .iter()
                .map(|t| index[t.as_slice()])
                .collect()
        })
        .collect();
    let sources = strings.iter().take_while(|s| s.len() <= max_len).count();
    let dist = (0..sources)
        .map(|src| {
            let mut d = vec![u8::MAX; strings.len()];
            d[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &adjacency[u] {
                    if d[v] == u8::MAX {
                        d[v] = d[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            d.truncate(sources);
            d
        })
        .collect();
    strings.truncate(sources);
    (strings, dist)
}

/// Next-token distributions drawn once per prefix from a seeded generator.
pub struct TableScorer {
    vocab: usize,
    seed: u64,
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl TableScorer {
    pub fn new(vocab: usize, seed: u64) -> Self {
        TableScorer {
            vocab,
            seed,
            table: HashMap::new(),
        }
    }
}

impl StepScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let (v, seed) = (self.vocab, self.seed);
        Ok(self
            .table
            .entry(prefix.to_vec())
            .or_insert_with(|| {
                let mut h = seed;
                for &t in prefix {
                    h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(t as u64 + 1);
                }
                let mut r = rng(h);
                let w: Vec<f64> = (0..v).map(|_| r.random_range(0.0..3.0f64).exp()).collect();
                let z: f64 = w.iter().sum();
                w.iter().map(|x| (x / z).ln()).collect()
            })
            .clone())
    }
}

/// Best finished sequence by per-step score over every sequence of at most
/// `max_len` steps.
pub fn exhaustive_best(scorer: &mut TableScorer, cfg: &BeamConfig) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    let mut frontier = vec![(vec![cfg.start], 0.0)];
    for step in 1..=cfg.max_len {
        let mut next = Vec::new();
        for (prefix, lp) in frontier {
            let scores = scorer.log_probs(&prefix).unwrap();
            for (tok, s) in scores.into_iter().enumerate() {
                if tok == cfg.end {
                    if step <= cfg.min_len {
                        continue;
                    }
                    let norm = (lp + s) / step as f64;
                    if best.as_ref().is_none_or(|b| norm > b.2) {
                        best = Some((prefix[1..].to_vec(), lp + s, norm));
                    }
                } else {
                    let mut p = prefix.clone();
                    p.push(tok);
                    next.push((p, lp + s));
                }
            }
        }
        frontier = next;
    }
    let (tokens, lp, _) = best.unwrap();
    (tokens, lp)
}
