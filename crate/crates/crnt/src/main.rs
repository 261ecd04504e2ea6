use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crnt::checkpoint;
use crnt::config::TrainConfig;
use crnt::decode::{decode_all, write_trace};
use crnt::manifest::{eval_samples, read_results, write_jsonl, DecodeResult, Manifest};
use crnt::synth::{generate_corpus, load_vocabulary, SyntheticSpec};
use crnt::train::{prepare_examples, train_to_dir, Trainer, VOCAB_FILE};
use crnt_core::eval::evaluate;
use crnt_core::rnnt::ModelMode;

#[derive(Parser)]
#[command(name = "crnt", version, about = "Contextual RNN transducer on synthetic speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (features, manifests, vocabulary).
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write per-epoch checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: ModelMode,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to vocab.txt next to the manifest.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Beam-search decode a manifest.
    Decode(DecodeArgs),
    /// Score decoding results on both metadata splits.
    Eval {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Decode and write one attention trace per utterance.
    TraceAttention(DecodeArgs),
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ModelMode, String> {
    s.parse().map_err(|e: crnt_core::Error| e.to_string())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn decode(args: DecodeArgs, traces_required: bool) -> Result<()> {
    if traces_required && args.trace_dir.is_none() {
        anyhow::bail!("trace-attention needs --trace-dir");
    }
    let vocab_path = args.vocab.unwrap_or_else(|| sibling(&args.ckpt, VOCAB_FILE));
    let vocab = load_vocabulary(&vocab_path)?;
    let state = checkpoint::load(&args.ckpt, &vocab).with_context(|| format!("loading {}", args.ckpt.display()))?;
    let manifest = Manifest::load(&args.manifest)?;
    let data = prepare_examples(&manifest, &vocab)?;
    let decoded = decode_all(&state, &vocab, &data, args.beam)?;
    let results: Vec<DecodeResult> = decoded.iter().map(|d| d.result.clone()).collect();
    write_jsonl(&args.out, &results)?;
    if let Some(dir) = &args.trace_dir {
        for d in &decoded {
            write_trace(dir, &d.result.utterance_id, &d.trace)?;
        }
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { spec, out } => {
            let spec = SyntheticSpec::load(&spec)?;
            generate_corpus(&spec, &out)?;
        }
        Command::Train {
            config,
            manifest,
            mode,
            out,
            vocab,
        } => {
            let config = TrainConfig::load(&config)?;
            let vocab_path = vocab.unwrap_or_else(|| sibling(&manifest, VOCAB_FILE));
            let vocab = load_vocabulary(&vocab_path)?;
            let manifest = Manifest::load(&manifest)?;
            let data = prepare_examples(&manifest, &vocab)?;
            let feature_dim = data[0].features.cols();
            let mut trainer = Trainer::new(config, mode, vocab, feature_dim)?;
            train_to_dir(&mut trainer, &data, &out, |e| {
                eprintln!("epoch {:>3}  mean nll {:.4}", e.epoch, e.mean_nll);
            })?;
        }
        Command::Decode(args) => decode(args, false)?,
        Command::TraceAttention(args) => decode(args, true)?,
        Command::Eval { refs, hyps, report } => {
            let refs = Manifest::load(&refs)?;
            let hyps = read_results(&hyps)?;
            let rep = evaluate(&eval_samples(&refs, &hyps));
            std::fs::write(&report, serde_json::to_string_pretty(&rep)?)
                .with_context(|| format!("writing {}", report.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
