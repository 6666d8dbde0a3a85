use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nctc_core::data::scan_labels;
use nctc_core::diagnostics::{self, GradCheckConfig};
use nctc_core::optimizer::{evaluate, train_with};
use nctc_core::{Dataset, EmbeddingTable, EpochStats, Model, ModelConfig, TrainConfig};

use crate::model_file::{load_model, save_model};
use crate::timing::{run_bench, BenchSettings};

#[derive(Debug, Parser)]
#[command(
    name = "nctc",
    version,
    about = "Non-consecutive n-gram tensor text classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the best-on-dev checkpoint.
    Train(TrainArgs),
    /// Report accuracy and the confusion matrix on a labelled file.
    Eval(EvalArgs),
    /// Print one predicted label per input line.
    Predict(PredictArgs),
    /// Export per-position class probabilities and expected scores as CSV.
    ScorePositions(ScoreArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the feature layer (and the enumeration oracle) against length.
    Bench(BenchArgs),
    /// Compare the dynamic program against brute-force enumeration.
    CheckDp(CheckDpArgs),
    /// Monte-Carlo check of the initialization's rank-1 slice norm.
    CheckInit(CheckInitArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Comma-separated label names; defaults to the sorted labels of the training file.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub l2: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the epoch log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Read from this file instead of standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// One score per label, e.g. -2,-1,0,1,2.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub scores: Vec<f64>,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 5)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub length: usize,
    #[arg(long, default_value_t = 3)]
    pub labels: usize,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 100)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 32)]
    pub oracle_max: usize,
    /// Minimum duration of each trial in milliseconds.
    #[arg(long, default_value_t = 10)]
    pub min_trial_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckDpArgs {
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CheckInitArgs {
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: Cli, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Train(args) => cmd_train(&args, out).map(|_| 0),
        Command::Eval(args) => cmd_eval(&args, out).map(|_| 0),
        Command::Predict(args) => with_input(args.input.as_deref(), stdin, |input| {
            cmd_predict(&args, input, out)
        })
        .map(|_| 0),
        Command::ScorePositions(args) => with_input(args.input.as_deref(), stdin, |input| {
            cmd_score_positions(&args, input, out)
        })
        .map(|_| 0),
        Command::Gradcheck(args) => cmd_gradcheck(&args, out).map(exit_code),
        Command::Bench(args) => cmd_bench(&args, out).map(|_| 0),
        Command::CheckDp(args) => cmd_check_dp(&args, out).map(exit_code),
        Command::CheckInit(args) => cmd_check_init(&args, out).map(exit_code),
    }
}

fn exit_code(pass: bool) -> i32 {
    if pass {
        0
    } else {
        1
    }
}

fn with_input<T>(
    path: Option<&Path>,
    stdin: &mut dyn BufRead,
    f: impl FnOnce(&mut dyn BufRead) -> Result<T>,
) -> Result<T> {
    match path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            f(&mut BufReader::new(file))
        }
        None => f(stdin),
    }
}

fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path).with_context(|| format!("loading embeddings {}", path.display()))
}

fn load_dataset(path: &Path, labels: &[String]) -> Result<Dataset> {
    Dataset::load(path, labels).with_context(|| format!("loading dataset {}", path.display()))
}

/// Tokens of an input line. Text after the first tab is used when the line
/// carries a label column, so labelled files can be fed directly.
fn line_tokens(line: &str) -> Vec<&str> {
    let text = line.split_once('\t').map_or(line, |(_, text)| text);
    text.split_whitespace().collect()
}

/// Embeds a line; an empty line becomes a single unknown (zero) word.
fn embed_line(table: &EmbeddingTable, tokens: &[&str]) -> Array2<f64> {
    if tokens.is_empty() {
        Array2::zeros((1, table.dim()))
    } else {
        table.embed(tokens)
    }
}

fn check_dims(model: &Model, table: &EmbeddingTable) -> Result<()> {
    ensure!(
        model.config.word_dim == table.dim(),
        "model expects {}-dimensional word vectors, embeddings have {}",
        model.config.word_dim,
        table.dim()
    );
    Ok(())
}

pub const EPOCH_LOG_HEADER: &str = "epoch\ttrain_loss\ttrain_acc\tdev_acc\tseconds";

pub fn format_epoch(stats: &EpochStats) -> String {
    let dev = stats
        .dev_accuracy
        .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
    format!(
        "{}\t{:.15}\t{:.4}\t{}\t{:.3}",
        stats.epoch, stats.train_loss, stats.train_accuracy, dev, stats.seconds
    )
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<Vec<EpochStats>> {
    let table = load_embeddings(&args.embeddings)?;
    let labels = match &args.labels {
        Some(l) => {
            let l: Vec<String> = l.iter().map(|s| s.trim().to_string()).collect();
            ensure!(
                l.iter().all(|s| !s.is_empty()),
                "--labels contains an empty name"
            );
            l
        }
        None => {
            let file = File::open(&args.train)
                .with_context(|| format!("opening {}", args.train.display()))?;
            scan_labels(BufReader::new(file))?
        }
    };
    let train_set = load_dataset(&args.train, &labels)?;
    ensure!(
        !train_set.is_empty(),
        "training file {} has no examples",
        args.train.display()
    );
    let dev_set = args
        .dev
        .as_deref()
        .map(|p| load_dataset(p, &labels))
        .transpose()?;
    info!(
        "{} training examples, {} labels, {} word vectors of dimension {}",
        train_set.len(),
        labels.len(),
        table.len(),
        table.dim()
    );

    let config = ModelConfig {
        order: args.order,
        hidden: args.hidden,
        layers: args.layers,
        decay: args.decay,
        dropout: args.dropout,
        word_dim: table.dim(),
        labels,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(args.seed);
    let model = Model::new(config, &mut init_rng)?;
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        l2_weight: args.l2,
        epochs: args.epochs,
        seed: args.seed,
        batch_size: args.batch,
        ..TrainConfig::default()
    };

    let train_data = train_set.encode(&table);
    let dev_data = dev_set.as_ref().map(|d| d.encode(&table));

    let mut log_file = args
        .log
        .as_deref()
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()
        .context("creating epoch log")?;
    writeln!(out, "{EPOCH_LOG_HEADER}")?;
    if let Some(f) = log_file.as_mut() {
        writeln!(f, "{EPOCH_LOG_HEADER}")?;
    }
    let mut io_error = None;
    let outcome = train_with(
        model,
        &train_data,
        dev_data.as_deref(),
        &train_cfg,
        |stats| {
            let line = format_epoch(stats);
            let res = writeln!(out, "{line}").and_then(|_| match log_file.as_mut() {
                Some(f) => writeln!(f, "{line}"),
                None => Ok(()),
            });
            if let Err(e) = res {
                io_error.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_error {
        return Err(e).context("writing epoch log");
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    if let Some((epoch, _)) = &outcome.best {
        info!("best dev accuracy at epoch {epoch}");
    }
    save_model(outcome.selected(), &args.out)?;
    Ok(outcome.history)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<f64> {
    let model = load_model(&args.model)?;
    let table = load_embeddings(&args.embeddings)?;
    check_dims(&model, &table)?;
    let data = load_dataset(&args.data, &model.config.labels)
        .context("data labels must match the model's label set")?;
    if data.is_empty() {
        bail!("{} contains no examples", args.data.display());
    }
    let eval = evaluate(&model, &data.encode(&table))?;
    writeln!(out, "examples\t{}", eval.count)?;
    writeln!(out, "accuracy\t{:.4}", eval.accuracy())?;
    writeln!(out, "confusion (rows: gold, columns: predicted)")?;
    write!(out, "gold\\pred")?;
    for l in &model.config.labels {
        write!(out, "\t{l}")?;
    }
    writeln!(out)?;
    for (l, row) in model.config.labels.iter().zip(eval.confusion.rows()) {
        write!(out, "{l}")?;
        for c in row {
            write!(out, "\t{c}")?;
        }
        writeln!(out)?;
    }
    Ok(eval.accuracy())
}

pub fn cmd_predict(args: &PredictArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let table = load_embeddings(&args.embeddings)?;
    check_dims(&model, &table)?;
    for line in input.lines() {
        let line = line?;
        let x = embed_line(&table, &line_tokens(&line));
        let label = model.predict(x.view())?;
        writeln!(out, "{}", model.config.labels[label])?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_score_positions(
    args: &ScoreArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let model = load_model(&args.model)?;
    let table = load_embeddings(&args.embeddings)?;
    check_dims(&model, &table)?;
    let m = model.num_labels();
    ensure!(
        args.scores.len() == m,
        "--scores has {} values but the model has {m} labels",
        args.scores.len()
    );
    let mut csv = csv::Writer::from_writer(out);
    let mut header = vec!["line_id".to_string(), "position".into(), "token".into()];
    header.extend((1..=m).map(|i| format!("p_{i}")));
    header.push("expected_score".into());
    csv.write_record(&header)?;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let tokens = line_tokens(&line);
        if tokens.is_empty() {
            continue;
        }
        let scores = model.per_position_scores(table.embed(&tokens).view(), &args.scores)?;
        for (pos, tok) in tokens.iter().enumerate() {
            let mut record = vec![(i + 1).to_string(), (pos + 1).to_string(), tok.to_string()];
            record.extend(scores.probs.row(pos).iter().map(|p| format!("{p:.6}")));
            record.push(format!("{:.6}", scores.expected[pos]));
            csv.write_record(&record)?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let cfg = GradCheckConfig {
        layers: args.layers,
        order: args.order,
        hidden: args.hidden,
        word_dim: args.word_dim,
        length: args.length,
        labels: args.labels,
        decay: args.decay,
        dropout: args.dropout,
        seed: args.seed,
        epsilon: args.epsilon,
        tolerance: args.tolerance,
    };
    let report = diagnostics::gradient_check(&cfg)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(out, "tensor\tentries\tmax_rel_error\tmax_abs_error\tstatus")?;
        for t in &report.tensors {
            let status = if t.max_rel_error < report.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                out,
                "{}\t{}\t{:.3e}\t{:.3e}\t{status}",
                t.name, t.entries, t.max_rel_error, t.max_abs_error
            )?;
        }
        writeln!(
            out,
            "{}: max relative error {:.3e} (tolerance {:.1e}, epsilon {:.1e})",
            if report.pass { "PASS" } else { "FAIL" },
            report.max_rel_error(),
            report.tolerance,
            args.epsilon
        )?;
    }
    Ok(report.pass)
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<Vec<crate::timing::BenchRow>> {
    let settings = BenchSettings {
        lengths: args.lengths.clone(),
        hidden: args.hidden,
        order: args.order,
        word_dim: args.word_dim,
        decay: args.decay,
        trials: args.trials,
        oracle_max: args.oracle_max,
        min_trial_time: Duration::from_millis(args.min_trial_ms),
        seed: args.seed,
    };
    let rows = run_bench(&settings)?;
    writeln!(out, "length\tforward_s\tforward_backward_s\toracle_s")?;
    for r in &rows {
        let oracle = r
            .oracle
            .map_or_else(|| "-".to_string(), |t| format!("{t:.6e}"));
        writeln!(
            out,
            "{}\t{:.6e}\t{:.6e}\t{oracle}",
            r.length, r.forward, r.forward_backward
        )?;
    }
    Ok(rows)
}

pub fn cmd_check_dp(args: &CheckDpArgs, out: &mut dyn Write) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = diagnostics::check_dp_equivalence(args.count, &mut rng)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
    } else {
        writeln!(out, "{}", report.summary())?;
    }
    Ok(report.pass)
}

pub fn cmd_check_init(args: &CheckInitArgs, out: &mut dyn Write) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = diagnostics::check_init_variance(args.dim, args.hidden, args.samples, &mut rng)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
    } else {
        writeln!(
            out,
            "rank-1 slice E[norm²] ≈ {:.4} ± {:.4} over {} samples, {}",
            report.estimate,
            report.std_error,
            report.samples,
            if report.pass { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(report.pass)
}
