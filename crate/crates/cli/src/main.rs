use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use iram::checkpoint::{load_checkpoint, save_checkpoint};
use iram::data::synthetic::{generate_synthetic, write_tsv, SyntheticGrammar};
use iram::data::{check_labels, Vocabulary};
use iram::run::{load_splits, DatasetKind, RunConfig};
use iram::trace::{trace_csv, trace_svg};
use iram::train::{evaluate, MetricsRecord, Trainer};
use iram::{EncoderKind, Execution, IramError};

const DATA_DIR_ENV: &str = "IRAM_DATA_DIR";

#[derive(Parser)]
#[command(name = "iram", version, about = "Iterative recursive attention sentiment classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Print a checkpoint's accuracy on a dataset split.
    Eval(EvalArgs),
    /// Export a sentence's attention matrix as CSV (and optionally SVG).
    Trace(TraceArgs),
    /// Write the synthetic negation/contrast dataset as TSV.
    GenerateSynthetic(GenerateArgs),
}

#[derive(Args)]
struct RunOverrides {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// One of sst2, sst5, imdb, synthetic.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunOverrides,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// vanilla or full.
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    no_char_ngrams: bool,
    #[arg(long)]
    no_query_finetune: bool,
    #[arg(long)]
    no_embedding_finetune: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Run directory for run.json, metrics.jsonl and checkpoint/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process each batch on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunOverrides,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct TraceArgs {
    checkpoint: PathBuf,
    /// Whitespace-separated tokens.
    sentence: String,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_run(o: &RunOverrides, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut run = match (&o.config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.exists() => RunConfig::load(p)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        run.seed = seed;
    }
    if let Some(d) = &o.dataset {
        run.dataset = DatasetKind::parse(d)?;
        run.model.num_classes = run.dataset.num_classes();
    }
    if run.data_dir.is_none() {
        run.data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    }
    Ok(run)
}

fn write_record(out: &mut impl Write, rec: &MetricsRecord) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(rec)?)?;
    out.flush()?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut run = resolve_run(&a.run, None)?;
    if let Some(g) = a.gamma {
        run.model.gamma = g;
    }
    if let Some(t) = a.iterations {
        run.model.iterations = t;
    }
    if let Some(e) = &a.encoder {
        run.model.encoder = match e.as_str() {
            "vanilla" => EncoderKind::Vanilla,
            "full" => EncoderKind::Full,
            other => bail!("unknown encoder {other:?}; expected vanilla or full"),
        };
    }
    run.model.char_ngrams &= !a.no_char_ngrams;
    run.model.query_finetune &= !a.no_query_finetune;
    run.model.embedding_finetune &= !a.no_embedding_finetune;
    if let Some(e) = a.epochs {
        run.epochs = e;
    }
    if let Some(out) = a.out {
        run.out = out;
    }
    if a.sequential {
        run.execution = Execution::Sequential;
    }
    run.validate()?;

    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    run.save(&run.out.join("run.json"))?;

    let splits = load_splits(&run)?;
    let vocab = Vocabulary::from_examples(&splits.train, run.min_count);
    let (model, params) = run.build_model(&vocab)?;
    eprintln!(
        "dataset {:?}: {} train / {} valid / {} test, vocabulary {}, {} parameters",
        run.dataset,
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        vocab.len(),
        params.num_scalars()
    );
    let mut trainer = Trainer::new(model, params, run.optim.clone(), run.seed, run.execution)?;
    let metrics_path = run.out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).with_context(|| metrics_path.display().to_string())?);
    let ckpt_dir = run.out.join("checkpoint");
    let mut best = f64::NEG_INFINITY;
    for epoch in 1..=run.epochs {
        trainer.train_epoch(&splits.train, &vocab)?;
        let train_m = trainer.evaluate(&splits.train, &vocab)?;
        write_record(&mut metrics, &MetricsRecord::new(epoch, "train", &train_m))?;
        let score = if splits.valid.is_empty() {
            train_m.accuracy
        } else {
            let valid_m = trainer.evaluate(&splits.valid, &vocab)?;
            write_record(&mut metrics, &MetricsRecord::new(epoch, "valid", &valid_m))?;
            valid_m.accuracy
        };
        eprintln!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, selection acc {score:.4}",
            train_m.loss, train_m.accuracy
        );
        if score > best {
            best = score;
            save_checkpoint(
                &ckpt_dir,
                &trainer.model,
                &trainer.params,
                &vocab,
                Some(&trainer.optim),
            )?;
        }
    }
    eprintln!("best selection accuracy {best:.4}; checkpoint in {}", ckpt_dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let fallback = a.checkpoint.parent().map(|p| p.join("run.json"));
    let run = resolve_run(&a.run, fallback.as_deref())?;
    let classes = ckpt.model.config.num_classes;
    if run.dataset.num_classes() != classes {
        return Err(IramError::Incompatible(format!(
            "checkpoint predicts {classes} classes but dataset {:?} has {}",
            run.dataset,
            run.dataset.num_classes()
        ))
        .into());
    }
    let splits = load_splits(&run)?;
    let examples = splits.get(&a.split)?;
    check_labels(examples, classes)?;
    let m = evaluate(
        &ckpt.model,
        &ckpt.params,
        examples,
        &ckpt.vocab,
        ckpt.model.config.batch_size,
        run.execution,
    )?;
    println!("{:.4}", m.accuracy);
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> Result<()> {
    let tokens: Vec<String> = a.sentence.split_whitespace().map(String::from).collect();
    if tokens.is_empty() {
        return Err(anyhow!(UsageError("sentence must contain at least one token".into())));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let trace = ckpt.model.trace(&ckpt.params, &ckpt.vocab.encode(&tokens))?;
    let csv = trace_csv(&tokens, &trace)?;
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| p.display().to_string())?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.svg {
        fs::write(p, trace_svg(&tokens, &trace)?).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let examples = generate_synthetic(&SyntheticGrammar::with_seed(a.seed), a.n)?;
    match &a.out {
        Some(p) => {
            let f = File::create(p).with_context(|| p.display().to_string())?;
            let mut w = BufWriter::new(f);
            write_tsv(&examples, &mut w)?;
            w.flush()?;
        }
        None => write_tsv(&examples, std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trace(a) => cmd_trace(a),
        Command::GenerateSynthetic(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
