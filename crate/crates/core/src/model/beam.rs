//! Beam search over chain-rule factorized next-token distributions.

use crate::data::EOS;
use crate::error::{Error, Result};

/// Anything that yields next-token log-probabilities for a prefix.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;

    /// `log P(y | prefix)` for every token `y`. The prefix starts with the
    /// start symbol.
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum decoding steps; the end symbol counts as a step.
    pub max_len: usize,
    /// The end symbol is forbidden during the first `min_len` steps.
    pub min_len: usize,
    pub start: usize,
    pub end: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 5,
            max_len: 60,
            min_len: 0,
            start: EOS,
            end: EOS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Emitted tokens, start and end symbols excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Steps taken: tokens plus the end symbol when finished.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Log-probability per step.
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.steps().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    pub best: BeamHypothesis,
    /// No hypothesis emitted the end symbol within `max_len` steps.
    pub truncated: bool,
    /// Number of scorer calls made.
    pub expansions: usize,
}

/// Breadth-limited search. Each step expands every live hypothesis by every
/// token and keeps the `width` best candidates by accumulated
/// log-probability; kept candidates ending in the end symbol retire. The
/// answer is the retired hypothesis with the best per-step score.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &mut S, cfg: &BeamConfig) -> Result<BeamResult> {
    if cfg.width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    if cfg.max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let v = scorer.vocab_size();
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![cfg.start], 0.0)];
    let mut retired: Vec<BeamHypothesis> = Vec::new();
    let mut expansions = 0;
    for step in 1..=cfg.max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * v);
        for (hi, (prefix, lp)) in live.iter().enumerate() {
            let scores = scorer.log_probs(prefix)?;
            expansions += 1;
            if scores.len() != v {
                return Err(Error::InvalidArgument(format!(
                    "scorer returned {} scores for vocabulary {v}",
                    scores.len()
                )));
            }
            for (tok, &s) in scores.iter().enumerate() {
                if tok == cfg.end && step <= cfg.min_len {
                    continue;
                }
                if s.is_finite() {
                    candidates.push((lp + s, hi, tok));
                }
            }
        }
        // Stable: equal scores keep (hypothesis, token) order.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(cfg.width);
        let mut next = Vec::with_capacity(candidates.len());
        for (score, hi, tok) in candidates {
            let prefix = &live[hi].0;
            if tok == cfg.end {
                retired.push(BeamHypothesis {
                    tokens: prefix[1..].to_vec(),
                    log_prob: score,
                    finished: true,
                });
            } else {
                let mut p = prefix.clone();
                p.push(tok);
                next.push((p, score));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    let best_of = |hyps: Vec<BeamHypothesis>| {
        hyps.into_iter().reduce(|best, h| {
            if h.normalized_score() > best.normalized_score() {
                h
            } else {
                best
            }
        })
    };
    if let Some(best) = best_of(retired) {
        return Ok(BeamResult {
            best,
            truncated: false,
            expansions,
        });
    }
    let unfinished = live
        .into_iter()
        .map(|(p, lp)| BeamHypothesis {
            tokens: p[1..].to_vec(),
            log_prob: lp,
            finished: false,
        })
        .collect();
    let best = best_of(unfinished)
        .ok_or_else(|| Error::InvalidArgument("beam search produced no hypothesis".into()))?;
    Ok(BeamResult {
        best,
        truncated: true,
        expansions,
    })
}

/// Step-by-step argmax decoding (lowest id on ties).
pub fn greedy_search<S: StepScorer + ?Sized>(scorer: &mut S, cfg: &BeamConfig) -> Result<BeamResult> {
    let mut prefix = vec![cfg.start];
    let mut log_prob = 0.0;
    for step in 1..=cfg.max_len {
        let scores = scorer.log_probs(&prefix)?;
        let mut best: Option<usize> = None;
        for (tok, &s) in scores.iter().enumerate() {
            if (tok == cfg.end && step <= cfg.min_len) || !s.is_finite() {
                continue;
            }
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(tok);
            }
        }
        let Some(tok) = best else { break };
        log_prob += scores[tok];
        if tok == cfg.end {
            return Ok(BeamResult {
                best: BeamHypothesis {
                    tokens: prefix[1..].to_vec(),
                    log_prob,
                    finished: true,
                },
                truncated: false,
                expansions: step,
            });
        }
        prefix.push(tok);
    }
    let steps = prefix.len() - 1;
    Ok(BeamResult {
        best: BeamHypothesis {
            tokens: prefix[1..].to_vec(),
            log_prob,
            finished: false,
        },
        truncated: true,
        expansions: steps,
    })
}
