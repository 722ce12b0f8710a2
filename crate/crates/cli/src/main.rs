mod config;
mod error;

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airwrite_core::model::{Decoder, Model};
use airwrite_core::pipeline::{prepare_examples, Recognizer};
use airwrite_core::training::{train, Checkpoint, TrainingMetadata};
use airwrite_core::trajectory::{
    builtin_templates, parse_corpus_line, read_corpus, read_templates, synth_generate,
    write_corpus, CorpusSample, SynthConfig, Trajectory, DEFAULT_SPACING,
};
use airwrite_core::vocab::Vocabulary;
use airwrite_service::{LoadedModel, ServiceState, DEFAULT_PORT};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use config::RunConfig;
use error::CliError;

/// Air-writing character recognition.
#[derive(Debug, Parser)]
#[command(name = "airwrite", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a labeled JSONL corpus and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled corpus; prints a metrics report.
    Eval(EvalArgs),
    /// Recognize one trajectory; prints the top-k candidates.
    Recognize(RecognizeArgs),
    /// Generate a synthetic corpus from glyph templates.
    Synth(SynthArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus. Without it a seeded 10% of `--corpus` is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON document with `model`, `train` and `spacing` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override such as `train.epochs=5` or `model.fusion=A`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `train.seed`; also seeds initialization.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "")]
    model_version: String,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Include per-sample alignments in the report.
    #[arg(long)]
    per_sample: bool,
}

#[derive(Debug, Args)]
struct RecognizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A corpus line or a bare `{"points": ...}` object.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value_t = 5)]
    topk: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Template file; the bundled 20-glyph set when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SPACING)]
    spacing: f64,
    /// Output JSONL; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory served under `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Recognize(a) => cmd_recognize(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn load_corpus(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    let corpus =
        read_corpus(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!(
            "{}: corpus is empty",
            path.display()
        )));
    }
    Ok(corpus)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(a.config.as_deref(), &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let corpus = load_corpus(&a.corpus)?;
    let (train_set, val_set) = match &a.val {
        Some(path) => (corpus, load_corpus(path)?),
        None => holdout(corpus, cfg.train.seed)?,
    };

    let labels = train_set
        .iter()
        .chain(&val_set)
        .filter_map(|t| t.label.as_deref());
    let vocab = match cfg.model.decoder {
        Decoder::Fc { .. } => Vocabulary::from_labels(labels)?,
        Decoder::Ctc => Vocabulary::ctc_from_labels(labels)?,
    };
    cfg.model.num_classes = vocab.len();
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!(
        "training on {} samples, validating on {}, {} classes, {} parameters",
        train_set.len(),
        val_set.len(),
        vocab.len(),
        model.num_parameters()
    );
    let train_ex = prepare_examples(&train_set, &vocab, cfg.spacing)?;
    let val_ex = prepare_examples(&val_set, &vocab, cfg.spacing)?;
    let outcome = train(model, &train_ex, &val_ex, &vocab, &cfg.train)?;

    let model_version = if a.model_version.is_empty() {
        format!(
            "{:?}-c{}-seed{}-ep{}",
            cfg.model.fusion, cfg.model.channels, cfg.train.seed, cfg.train.epochs
        )
    } else {
        a.model_version
    };
    let mut ckpt = Checkpoint::new(
        outcome.model,
        vocab,
        TrainingMetadata {
            epoch: cfg.train.epochs,
            seed: cfg.train.seed,
            history: outcome.history.clone(),
            spacing: cfg.spacing,
            model_version,
        },
    );
    ckpt.optimizer = Some(outcome.adam);
    ckpt.save(&a.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    log::info!("wrote {}", a.out.display());
    print_json(&outcome.history)
}

/// Seeded shuffle, then the first 10% (at least one sample) is validation.
fn holdout(
    mut corpus: Vec<Trajectory>,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>), CliError> {
    if corpus.len() < 2 {
        return Err(CliError::Data(
            "need at least 2 samples to hold out validation".into(),
        ));
    }
    corpus.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (corpus.len() / 10).max(1);
    let train = corpus.split_off(n_val);
    Ok((train, corpus))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let corpus = load_corpus(&a.corpus)?;
    let recognizer = Recognizer::new(ckpt.model, ckpt.vocab, ckpt.metadata.spacing)?;
    let report = recognizer.evaluate_corpus(&corpus, a.per_sample)?;
    print_json(&report)
}

#[derive(Serialize)]
struct RecognizeOutput {
    candidates: Vec<airwrite_core::pipeline::Candidate>,
}

fn cmd_recognize(a: RecognizeArgs) -> Result<(), CliError> {
    if a.topk == 0 {
        return Err(CliError::Usage("--topk must be positive".into()));
    }
    let text = std::fs::read_to_string(&a.traj)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.traj.display())))?;
    let traj = parse_corpus_line(text.trim(), 1, false)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.traj.display())))?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let recognizer = Recognizer::new(ckpt.model, ckpt.vocab, ckpt.metadata.spacing)?;
    let candidates = recognizer.recognize(&traj, a.topk)?;
    print_json(&RecognizeOutput { candidates })
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let templates = match &a.templates {
        Some(path) => {
            read_templates(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => builtin_templates(),
    };
    if !(a.spacing > 0.0 && a.spacing.is_finite()) {
        return Err(CliError::Usage(format!(
            "--spacing must be positive, got {}",
            a.spacing
        )));
    }
    let cfg = SynthConfig {
        per_class: a.per_class,
        seed: a.seed,
        spacing: a.spacing,
        ..SynthConfig::default()
    };
    let samples = synth_generate(&templates, &cfg)?;
    match &a.out {
        Some(path) => {
            write_corpus(path, &samples)?;
            log::info!("wrote {} samples to {}", samples.len(), path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            for s in &samples {
                let line =
                    serde_json::to_string(&CorpusSample::from(s)).expect("sample serializes");
                writeln!(out, "{line}").map_err(|e| CliError::Data(format!("stdout: {e}")))?;
            }
        }
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let model = LoadedModel::load(&a.ckpt)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.ckpt.display())))?;
    log::info!(
        "loaded {} ({} labels, version {})",
        a.ckpt.display(),
        model.recognizer().vocab().len(),
        model.model_version()
    );
    let state = ServiceState::with_model(model);
    let runtime =
        tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("runtime: {e}")))?;
    runtime
        .block_on(airwrite_service::serve(
            SocketAddr::new(a.host, a.port),
            state,
            a.static_dir,
        ))
        .map_err(|e| CliError::Data(format!("serve: {e}")))
}
