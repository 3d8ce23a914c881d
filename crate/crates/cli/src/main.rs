//! `laso`: corpus synthesis, training, decoding, benchmarking, attention
//! export, gradient checking and the summarizer-depth ablation.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! failure (including a failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use laso::ModelKind;

/// Bad flags, an invalid configuration, or an unusable config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "laso",
    version,
    about = "One-pass non-autoregressive speech recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a complete run configuration to start from.
    InitConfig(InitConfigArgs),
    /// Generate a synthetic corpus: manifests, vocabulary, feature files.
    Synth(SynthArgs),
    /// Train a model, writing one checkpoint per epoch and an averaged one.
    Train(TrainArgs),
    /// Decode a manifest and report the character error rate.
    Decode(DecodeArgs),
    /// Compare one-pass and beam-search latency.
    Bench(BenchArgs),
    /// Write summarizer attention matrices.
    ExportAttn(ExportAttnArgs),
    /// Verify reverse-mode gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and score one model per summarizer depth.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct InitConfigArgs {
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Utterances in `train.tsv`.
    #[arg(long, default_value_t = 2000)]
    pub num_utts: usize,
    /// Utterances in `test.tsv`; no test manifest when 0.
    #[arg(long, default_value_t = 0)]
    pub test_utts: usize,
    /// Distinct tokens (the vocabulary adds `<unk>` and `<eos>`).
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    pub min_tokens: usize,
    #[arg(long, default_value_t = 20)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 4)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 8)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 80)]
    pub n_mels: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "laso", value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub average_last: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint (parameters, optimizer, counters).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to `vocab.txt` next to the manifest.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Hypotheses, one `id<TAB>text` line per utterance.
    #[arg(long)]
    pub out: PathBuf,
    /// Beam width for autoregressive checkpoints.
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    /// Maximum beam-search steps; defaults to what the model can hold.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Cut one-pass predictions at the first `<eos>`.
    #[arg(long)]
    pub truncate_at_first_eos: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub laso: PathBuf,
    #[arg(long)]
    pub ar: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Use at most this many utterances from the manifest.
    #[arg(long, default_value_t = 100)]
    pub utts: usize,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    /// Maximum beam-search steps; defaults to what the model can hold.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Also time both systems against output length at a fixed duration,
    /// using the prototypes stored with a synthetic corpus.
    #[arg(long, value_delimiter = ',')]
    pub sweep_lengths: Vec<usize>,
    #[arg(long, default_value_t = 240)]
    pub sweep_frames: usize,
    #[arg(long, default_value_t = 10)]
    pub sweep_per_length: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ExportAttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Summarizer block, 0-based; defaults to the last.
    #[arg(long)]
    pub block: Option<usize>,
    /// Export at most this many utterances.
    #[arg(long, default_value_t = 10)]
    pub utts: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Probed entries per parameter tensor in the whole-model checks.
    #[arg(long, default_value_t = 4)]
    pub per_tensor: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub depths: Vec<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Markdown table.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: laso::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::InitConfig(a) => commands::init_config(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Decode(a) => commands::decode(a),
        Command::Bench(a) => commands::bench(a),
        Command::ExportAttn(a) => commands::export_attn(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| {
        c.is::<UsageError>() || matches!(c.downcast_ref::<laso::Error>(), Some(laso::Error::Config { .. }))
    });
    if usage {
        1
    } else {
        2
    }
}
