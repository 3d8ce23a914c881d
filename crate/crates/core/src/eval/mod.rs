//! Decoding, error rates, latency measurement, attention export, the
//! summarizer-depth ablation and the gradient suite.

mod ablation;
mod attention;
mod bench;
mod cer;
mod decode;
mod gradients;

pub use ablation::{ablation_table, cer_spread, evaluate_cer, pds_ablation, AblationEntry};
pub use attention::{export_attention, write_pgm, AttentionExport};
pub use bench::{benchmark, length_sweep, median, BenchOptions, BenchReport, LatencyStats, LengthPoint};
pub use cer::{cer, corpus_cer, edit_distance, ErrorCounts};
pub use decode::{beam_decode, greedy_decode, strip_fillers, write_hypotheses, DecodeOptions, DecodeResult};
pub use gradients::gradient_suite;
