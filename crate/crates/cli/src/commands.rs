use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use laso::data::{
    load_manifest, read_prototypes, Cmvn, Manifest, SynthConfig, SynthCorpus, Utterance, VOCAB_FILE,
};
use laso::eval::{
    ablation_table, beam_decode, benchmark, cer_spread, export_attention, gradient_suite, greedy_decode,
    length_sweep, pds_ablation, write_hypotheses, BenchOptions, DecodeOptions, DecodeResult, ErrorCounts,
};
use laso::model::{BeamConfig, Seq2Seq};
use laso::train::{Example, Trainer};
use laso::{ArModel, Checkpoint, GradCheckOptions, LasoModel, ModelKind, Vocabulary};

use crate::config::{seed_or_env, RunConfig};
use crate::{
    AblateArgs, BenchArgs, DecodeArgs, ExportAttnArgs, GradcheckArgs, InitConfigArgs, SynthArgs, TrainArgs,
    UsageError,
};

pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const TEST_MANIFEST: &str = "test.tsv";
pub const METRICS_LOG: &str = "metrics.log";
pub const AVERAGED_CHECKPOINT: &str = "averaged.lckp";

pub fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch{epoch:03}.lckp")
}

fn vocab_path(explicit: Option<&Path>, manifest: &Path) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new("")).join(VOCAB_FILE))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Ok(Vocabulary::read(path)?)
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(load_manifest(path)?)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::read(path)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf, UsageError> {
    path.ok_or_else(|| UsageError(format!("no {what} given (flag or config paths)")))
}

pub fn init_config(args: InitConfigArgs) -> Result<ExitCode> {
    let text = serde_json::to_string_pretty(&RunConfig::tiny())? + "\n";
    match args.out {
        Some(p) => write_text(&p, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let config = SynthConfig {
        num_utts: args.num_utts + args.test_utts,
        vocab_size: args.vocab_size,
        min_tokens: args.min_tokens,
        max_tokens: args.max_tokens,
        min_frames_per_token: args.min_frames,
        max_frames_per_token: args.max_frames,
        noise: args.noise,
        n_mels: args.n_mels,
        seed: seed_or_env(args.seed)?,
    };
    config.validate()?;
    create_dir(&args.out)?;
    let corpus = SynthCorpus::generate(&config)?;
    let n = args.num_utts;
    let train = corpus.write(&args.out, TRAIN_MANIFEST, 0..n)?;
    println!("{} utterances -> {}", n, train.display());
    if args.test_utts > 0 {
        let test = corpus.write(&args.out, TEST_MANIFEST, n..n + args.test_utts)?;
        println!("{} utterances -> {}", args.test_utts, test.display());
    }
    println!(
        "vocabulary of {} entries, seed {}",
        corpus.vocab.len(),
        config.seed
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::tiny(),
    };
    if args.train_manifest.is_some() {
        cfg.paths.train_manifest = args.train_manifest.clone();
    }
    if args.vocab.is_some() {
        cfg.paths.vocab = args.vocab.clone();
    }
    if args.checkpoint_dir.is_some() {
        cfg.paths.checkpoint_dir = args.checkpoint_dir.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.max_steps.is_some() {
        cfg.train.max_steps = args.max_steps;
    }
    if let Some(k) = args.average_last {
        cfg.train.average_last = k;
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let manifest_path = require(cfg.paths.train_manifest.clone(), "training manifest")?;
    let dir = cfg
        .paths
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("checkpoints"));
    cfg.paths.checkpoint_dir = Some(dir.clone());
    let vocab = read_vocab(&vocab_path(cfg.paths.vocab.as_deref(), &manifest_path))?;
    cfg.model.vocab_size = vocab.len();
    cfg.validate()?;

    let manifest = read_manifest(&manifest_path)?;
    let utts = manifest.load_all(cfg.model.n_mels, cfg.model.max_len)?;
    if utts.is_empty() {
        return Err(UsageError(format!("{} lists no utterances", manifest_path.display())).into());
    }
    if let Some(w) = manifest.stats().length_warning(cfg.model.max_len) {
        eprintln!("warning: {w}");
    }
    let data: Vec<Example<f32>> = utts.iter().map(|u| Example::from_utterance(u, &vocab)).collect();
    create_dir(&dir)?;
    write_text(
        &dir.join("config.json"),
        &(serde_json::to_string_pretty(&cfg)? + "\n"),
    )?;
    let resume = args.resume.as_deref().map(read_checkpoint).transpose()?;
    let cmvn = match &resume {
        Some(ckpt) => ckpt.cmvn()?,
        None => Some(Cmvn::fit(utts.iter().map(|u| &u.features))?),
    };
    println!(
        "training {} on {} utterances, {} epochs, seed {seed}",
        args.model,
        data.len(),
        cfg.train.epochs
    );
    match args.model {
        ModelKind::Laso => {
            let mut model = LasoModel::<f32>::new(cfg.model.clone(), seed)?;
            model.set_cmvn(cmvn)?;
            run_training(model, &cfg, resume.as_ref(), &data, &dir)?;
        }
        ModelKind::Ar => {
            let mut model = ArModel::<f32>::new(cfg.model.clone(), seed)?;
            model.set_cmvn(cmvn)?;
            run_training(model, &cfg, resume.as_ref(), &data, &dir)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_training<M: Seq2Seq<f32>>(
    model: M,
    cfg: &RunConfig,
    resume: Option<&Checkpoint>,
    data: &[Example<f32>],
    dir: &Path,
) -> Result<()> {
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(model, cfg.train.clone(), ckpt)?,
        None => Trainer::new(model, cfg.train.clone())?,
    };
    let log_path = dir.join(METRICS_LOG);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log_err = None;
    let averaged = trainer.fit(
        data,
        |m| {
            if let Err(e) = writeln!(log, "{m}") {
                log_err.get_or_insert(e);
            }
        },
        |m, ckpt| {
            let path = dir.join(epoch_checkpoint(m.epoch));
            ckpt.write(&path)?;
            println!(
                "epoch {:>3}  steps {:>5}  loss {:.4}  acc {:.4}  {:.1}s  -> {}",
                m.epoch,
                m.steps,
                m.loss,
                m.accuracy,
                m.seconds,
                path.display()
            );
            Ok(())
        },
    )?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let path = dir.join(AVERAGED_CHECKPOINT);
    averaged.write(&path)?;
    println!("averaged checkpoint -> {}", path.display());
    Ok(())
}

fn load_utterances(
    manifest: &Manifest,
    n_mels: usize,
    max_len: usize,
    limit: usize,
) -> Result<Vec<Utterance>> {
    (0..manifest.len().min(limit))
        .map(|i| manifest.load(i, n_mels, max_len).map_err(Into::into))
        .collect()
}

fn mean_ms(results: &[DecodeResult]) -> f64 {
    1e3 * results.iter().map(|r| r.decode_seconds).sum::<f64>() / results.len().max(1) as f64
}

pub fn decode(args: DecodeArgs) -> Result<ExitCode> {
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let manifest = read_manifest(&args.manifest)?;
    let vocab = read_vocab(&vocab_path(args.vocab.as_deref(), &args.manifest))?;
    let c = &ckpt.config;
    let utts = load_utterances(&manifest, c.n_mels, c.max_len, usize::MAX)?;
    let results: Vec<DecodeResult> = match ckpt.kind {
        ModelKind::Laso => {
            let model = LasoModel::<f32>::from_checkpoint(&ckpt)?;
            let opts = DecodeOptions {
                truncate_at_first_eos: args.truncate_at_first_eos,
            };
            utts.iter()
                .map(|u| greedy_decode(&model, &u.id, &u.features, &vocab, opts))
                .collect::<laso::Result<_>>()?
        }
        ModelKind::Ar => {
            let model = ArModel::<f32>::from_checkpoint(&ckpt)?;
            let beam = BeamConfig {
                width: args.beam_width,
                max_len: args.max_len.unwrap_or(model.max_prefix()),
                ..BeamConfig::default()
            };
            utts.iter()
                .map(|u| beam_decode(&model, &u.id, &u.features, &vocab, &beam))
                .collect::<laso::Result<_>>()?
        }
    };
    write_hypotheses(&args.out, &results)?;
    let mut counts = ErrorCounts::default();
    for (u, r) in utts.iter().zip(&results) {
        counts.add(&u.transcript, &r.text);
    }
    println!(
        "{} utterances  CER {:.2}%  mean decode {:.3} ms  -> {}",
        results.len(),
        100.0 * counts.rate(),
        mean_ms(&results),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn bench(args: BenchArgs) -> Result<ExitCode> {
    let laso = LasoModel::<f32>::from_checkpoint(&read_checkpoint(&args.laso)?)?;
    let ar = ArModel::<f32>::from_checkpoint(&read_checkpoint(&args.ar)?)?;
    let manifest = read_manifest(&args.manifest)?;
    let vocab = read_vocab(&vocab_path(args.vocab.as_deref(), &args.manifest))?;
    let c = laso.config();
    let utts = load_utterances(&manifest, c.n_mels, c.max_len, args.utts)?;
    let opts = BenchOptions {
        repetitions: args.repetitions,
        warmup_runs: args.warmup,
        beam: BeamConfig {
            width: args.beam_width,
            max_len: args.max_len.unwrap_or(ar.max_prefix()),
            ..BeamConfig::default()
        },
        ..BenchOptions::default()
    };
    let report = benchmark(&utts, &vocab, &laso, &ar, &opts)?;
    println!("{report}");
    let mut json: serde_json::Value = serde_json::from_str(&report.to_json())?;
    if !args.sweep_lengths.is_empty() {
        let dir = args.manifest.parent().unwrap_or(Path::new(""));
        let prototypes = read_prototypes(dir)?;
        let corpus = SynthCorpus {
            config: SynthConfig {
                num_utts: 0,
                vocab_size: prototypes.shape()[0],
                n_mels: prototypes.shape()[1],
                ..SynthConfig::default()
            },
            vocab: vocab.clone(),
            prototypes,
            utterances: Vec::new(),
        };
        let points = length_sweep(
            &corpus,
            &laso,
            &ar,
            &args.sweep_lengths,
            args.sweep_frames,
            args.sweep_per_length,
            &opts,
            seed_or_env(args.seed)?,
        )?;
        println!("{:>7} {:>12} {:>12}", "tokens", "LASO ms", "AR ms");
        for p in &points {
            println!(
                "{:>7} {:>12.3} {:>12.3}",
                p.tokens, p.laso_median_ms, p.ar_median_ms
            );
        }
        json["length_sweep"] = serde_json::to_value(&points)?;
    }
    write_text(&args.out, &(serde_json::to_string_pretty(&json)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

pub fn export_attn(args: ExportAttnArgs) -> Result<ExitCode> {
    let model = LasoModel::<f32>::from_checkpoint(&read_checkpoint(&args.checkpoint)?)?;
    let manifest = read_manifest(&args.manifest)?;
    let c = model.config();
    let block = args.block.unwrap_or(c.pds_blocks - 1);
    let utts = load_utterances(&manifest, c.n_mels, c.max_len, args.utts)?;
    create_dir(&args.out)?;
    let mut monotone = 0;
    for u in &utts {
        let export = export_attention(&model, &u.features, block)?;
        export.write(&args.out, &u.id)?;
        if export.is_monotone(u.transcript.chars().count()) {
            monotone += 1;
        }
    }
    println!(
        "block {block}: {} utterances, row argmax non-decreasing over the transcript in {monotone} -> {}",
        utts.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let opts = GradCheckOptions {
        tol: args.tol,
        per_tensor: Some(args.per_tensor),
        seed: seed_or_env(args.seed)?,
        ..GradCheckOptions::default()
    };
    let reports = gradient_suite(&opts)?;
    let text: String = reports.iter().map(|r| format!("{r}\n")).collect();
    print!("{text}");
    if let Some(p) = &args.out {
        write_text(p, &text)?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        eprintln!(
            "{failed} of {} checks exceed tolerance {:e}",
            reports.len(),
            args.tol
        );
        return Ok(ExitCode::from(2));
    }
    println!("all {} checks within {:e}", reports.len(), args.tol);
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(args: AblateArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::tiny(),
    };
    if args.train_manifest.is_some() {
        cfg.paths.train_manifest = args.train_manifest.clone();
    }
    if args.test_manifest.is_some() {
        cfg.paths.test_manifest = args.test_manifest.clone();
    }
    if args.vocab.is_some() {
        cfg.paths.vocab = args.vocab.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.depths.is_empty() || args.depths.contains(&0) {
        return Err(UsageError("depths must be positive".into()).into());
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let train_path = require(cfg.paths.train_manifest.clone(), "training manifest")?;
    let test_path = require(cfg.paths.test_manifest.clone(), "test manifest")?;
    let vocab = read_vocab(&vocab_path(cfg.paths.vocab.as_deref(), &train_path))?;
    cfg.model.vocab_size = vocab.len();
    cfg.validate()?;
    let (mels, len) = (cfg.model.n_mels, cfg.model.max_len);
    let train = read_manifest(&train_path)?.load_all(mels, len)?;
    let test = read_manifest(&test_path)?.load_all(mels, len)?;
    let entries = pds_ablation(
        &cfg.model,
        &cfg.train,
        &train,
        &test,
        &vocab,
        &args.depths,
        seed,
        |d, m| {
            println!(
                "depth {d}  epoch {:>3}  loss {:.4}  acc {:.4}",
                m.epoch, m.loss, m.accuracy
            );
        },
    )?;
    let table = ablation_table("LASO", &entries);
    print!("{table}");
    println!(
        "largest CER difference {:.2} points",
        100.0 * cer_spread(&entries)
    );
    write_text(&args.out, &table)?;
    Ok(ExitCode::SUCCESS)
}
