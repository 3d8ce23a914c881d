use serde::Serialize;

use crate::data::{SynthCorpus, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::cer::ErrorCounts;
use crate::eval::decode::{beam_decode, greedy_decode, DecodeOptions, DecodeResult};
use crate::model::{ArModel, BeamConfig, LasoModel};
use crate::numeric::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    /// Timed passes over the utterance list.
    pub repetitions: usize,
    /// Untimed decodes per system before measuring.
    pub warmup_runs: usize,
    pub beam: BeamConfig,
    /// Audio duration represented by one feature frame.
    pub frame_shift_ms: f64,
    pub decode: DecodeOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 1,
            warmup_runs: 3,
            beam: BeamConfig::default(),
            frame_shift_ms: 10.0,
            decode: DecodeOptions::default(),
        }
    }
}

/// Latency distribution of one system. `rtf` includes preprocessing;
/// `rtf_model` counts model time only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub system: String,
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_with_preprocess_ms: f64,
    pub median_with_preprocess_ms: f64,
    pub rtf: f64,
    pub rtf_model: f64,
    pub cer: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

impl LatencyStats {
    fn from_results(system: &str, results: &[(DecodeResult, &str)], audio_seconds: f64) -> Self {
        let model: Vec<f64> = results.iter().map(|(r, _)| r.decode_seconds * 1e3).collect();
        let total: Vec<f64> = results.iter().map(|(r, _)| r.total_seconds() * 1e3).collect();
        let mut errors = ErrorCounts::default();
        for (r, reference) in results {
            errors.add(reference, &r.text);
        }
        LatencyStats {
            system: system.to_string(),
            runs: results.len(),
            mean_ms: mean(&model),
            median_ms: median(&model),
            min_ms: model.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: model.iter().copied().fold(0.0, f64::max),
            mean_with_preprocess_ms: mean(&total),
            median_with_preprocess_ms: median(&total),
            rtf: total.iter().sum::<f64>() / 1e3 / audio_seconds,
            rtf_model: model.iter().sum::<f64>() / 1e3 / audio_seconds,
            cer: errors.rate(),
        }
    }
}

/// Batch-size-one latency comparison of the two systems.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub utterances: usize,
    pub repetitions: usize,
    pub beam_width: usize,
    pub max_len: usize,
    /// Audio covered by one repetition.
    pub audio_seconds: f64,
    pub laso: LatencyStats,
    pub ar: LatencyStats,
    /// Ratio of median latencies, autoregressive over one-pass.
    pub speedup: f64,
    pub speedup_mean: f64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} utterances x {} repetitions, {:.1} s audio, beam {} / max {}",
            self.utterances, self.repetitions, self.audio_seconds, self.beam_width, self.max_len
        )?;
        writeln!(
            f,
            "{:<8} {:>10} {:>10} {:>14} {:>9} {:>9} {:>7}",
            "system", "median ms", "mean ms", "mean+prep ms", "RTF", "RTF model", "CER %"
        )?;
        for s in [&self.laso, &self.ar] {
            writeln!(
                f,
                "{:<8} {:>10.3} {:>10.3} {:>14.3} {:>9.5} {:>9.5} {:>7.2}",
                s.system,
                s.median_ms,
                s.mean_ms,
                s.mean_with_preprocess_ms,
                s.rtf,
                s.rtf_model,
                100.0 * s.cer
            )?;
        }
        write!(
            f,
            "speedup (median) {:.1}x, (mean) {:.1}x",
            self.speedup, self.speedup_mean
        )
    }
}

fn check_pair<T: Scalar>(laso: &LasoModel<T>, ar: &ArModel<T>) -> Result<()> {
    if !laso.config().same_width(ar.config()) {
        return Err(Error::InvalidArgument(
            "the two models differ in width hyperparameters".into(),
        ));
    }
    Ok(())
}

/// Decodes every utterance one at a time with both systems, alternating
/// between them utterance by utterance.
pub fn benchmark<T: Scalar>(
    utts: &[Utterance],
    vocab: &Vocabulary,
    laso: &LasoModel<T>,
    ar: &ArModel<T>,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    check_pair(laso, ar)?;
    if utts.is_empty() || opts.repetitions == 0 {
        return Err(Error::InvalidArgument("nothing to benchmark".into()));
    }
    for u in utts.iter().cycle().take(opts.warmup_runs) {
        greedy_decode(laso, &u.id, &u.features, vocab, opts.decode)?;
        beam_decode(ar, &u.id, &u.features, vocab, &opts.beam)?;
    }
    let mut nar = Vec::with_capacity(utts.len() * opts.repetitions);
    let mut autoreg = Vec::with_capacity(utts.len() * opts.repetitions);
    for _ in 0..opts.repetitions {
        for u in utts {
            nar.push((
                greedy_decode(laso, &u.id, &u.features, vocab, opts.decode)?,
                u.transcript.as_str(),
            ));
            autoreg.push((
                beam_decode(ar, &u.id, &u.features, vocab, &opts.beam)?,
                u.transcript.as_str(),
            ));
        }
    }
    let frames: usize = utts.iter().map(Utterance::frames).sum();
    let audio_seconds = frames as f64 * opts.frame_shift_ms / 1e3;
    let total_audio = audio_seconds * opts.repetitions as f64;
    let laso_stats = LatencyStats::from_results("LASO", &nar, total_audio);
    let ar_stats = LatencyStats::from_results("AR", &autoreg, total_audio);
    Ok(BenchReport {
        utterances: utts.len(),
        repetitions: opts.repetitions,
        beam_width: opts.beam.width,
        max_len: opts.beam.max_len,
        audio_seconds,
        speedup: ar_stats.median_ms / laso_stats.median_ms,
        speedup_mean: ar_stats.mean_ms / laso_stats.mean_ms,
        laso: laso_stats,
        ar: ar_stats,
    })
}

/// Median latencies for transcripts of one length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthPoint {
    pub tokens: usize,
    pub laso_median_ms: f64,
    pub ar_median_ms: f64,
}

/// Latency against output length at a fixed input duration of `frames`.
/// The beam search is held to exactly `n` tokens for length `n` (the end
/// symbol is barred for `n` steps and search stops one step later), so its
/// cost reflects the output length rather than when an untrained model
/// happens to stop.
#[allow(clippy::too_many_arguments)]
pub fn length_sweep<T: Scalar>(
    corpus: &SynthCorpus,
    laso: &LasoModel<T>,
    ar: &ArModel<T>,
    lengths: &[usize],
    frames: usize,
    per_length: usize,
    opts: &BenchOptions,
    seed: u64,
) -> Result<Vec<LengthPoint>> {
    check_pair(laso, ar)?;
    let mut points = Vec::with_capacity(lengths.len());
    for (i, &n) in lengths.iter().enumerate() {
        if n > ar.config().max_len {
            return Err(Error::InvalidArgument(format!(
                "length {n} exceeds the autoregressive model's max_len {}",
                ar.config().max_len
            )));
        }
        let utts = corpus.fixed_duration(n, frames, per_length, seed.wrapping_add(i as u64))?;
        let beam = BeamConfig {
            min_len: n,
            max_len: n + 1,
            ..opts.beam
        };
        for u in utts.iter().cycle().take(opts.warmup_runs) {
            greedy_decode(laso, &u.id, &u.features, &corpus.vocab, opts.decode)?;
            beam_decode(ar, &u.id, &u.features, &corpus.vocab, &beam)?;
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..opts.repetitions.max(1) {
            for u in &utts {
                a.push(
                    greedy_decode(laso, &u.id, &u.features, &corpus.vocab, opts.decode)?.decode_seconds * 1e3,
                );
                b.push(beam_decode(ar, &u.id, &u.features, &corpus.vocab, &beam)?.decode_seconds * 1e3);
            }
        }
        points.push(LengthPoint {
            tokens: n,
            laso_median_ms: median(&a),
            ar_median_ms: median(&b),
        });
    }
    Ok(points)
}
