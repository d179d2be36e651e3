use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use txclass_cli::pipeline::{self, Fold, ScoreSource};
use txclass_cli::streaming::{self, RunOptions};
use txclass_cli::{executable_hash, tools, Context, Report, TaskSpec};
use txclass_core::{Error, Result};

/// Weakly supervised transaction classification.
#[derive(Parser)]
#[command(name = "txclass", version)]
struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Run single-threaded everywhere.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Run store root (else $TXCLASS_STORE, the task file, or ./runs-store).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Code version recorded with runs and checked at inference (default:
    /// hash of this executable).
    #[arg(long, global = true)]
    code_version: Option<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpora with ground truth.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Normalize and group raw transactions.
    Prep {
        /// Transactions as JSON lines, or CSV by extension.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split the task's groups into train, validation and test by account.
    Split(TaskArg),
    /// Subword embeddings.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Anchor-word diagnostics.
    #[command(subcommand)]
    Anchor(AnchorCmd),
    /// Labeling functions.
    #[command(subcommand)]
    Lf(LfCmd),
    /// Generative label model.
    #[command(subcommand)]
    Labelmodel(LabelModelCmd),
    /// Train candidate classifiers and register the one at the selection rank.
    Train {
        #[command(flatten)]
        task: TaskArg,
        /// Number of seeds (default from the task file).
        #[arg(long)]
        runs: Option<usize>,
        /// 1-based rank of the registered candidate (default from the task file).
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Batch scores from the task's best run.
    Predict {
        #[command(flatten)]
        task: TaskArg,
        #[command(flatten)]
        fold: FoldArg,
        /// Groups file to score instead of a fold.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file (default: <fold>.scores.jsonl in the workdir).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Load artifacts even if they came from a different code version.
        #[arg(long)]
        allow_code_mismatch: bool,
    },
    /// Balanced accuracy, recall and threshold sweep.
    Eval(EvalArgs),
    /// File-backed streaming inference.
    #[command(subcommand)]
    Stream(StreamCmd),
}

#[derive(Args)]
struct TaskArg {
    /// Task file.
    #[arg(long = "task")]
    path: PathBuf,
}

impl TaskArg {
    fn load(&self) -> Result<TaskSpec> {
        TaskSpec::load(&self.path)
    }
}

#[derive(Args)]
struct FoldArg {
    #[arg(long, value_enum, default_value_t = FoldName::Test)]
    fold: FoldName,
}

#[derive(Clone, Copy, ValueEnum)]
enum FoldName {
    Train,
    Validation,
    Test,
}

impl From<FoldName> for Fold {
    fn from(f: FoldName) -> Fold {
        match f {
            FoldName::Train => Fold::Train,
            FoldName::Validation => Fold::Validation,
            FoldName::Test => Fold::Test,
        }
    }
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Write transactions.jsonl and truth.jsonl.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArg {
    /// Embedding file.
    #[arg(long, conflicts_with = "task", required_unless_present = "task")]
    model: Option<PathBuf>,
    /// Use the embedding in the task's workdir.
    #[arg(long)]
    task: Option<PathBuf>,
}

impl ModelArg {
    fn path(&self) -> Result<PathBuf> {
        match (&self.model, &self.task) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(t)) => pipeline::Paths(&TaskSpec::load(t)?).embedding(),
            (None, None) => Err(Error::Config("need --model or --task".into())),
        }
    }
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Train on the task's training fold.
    Train(TaskArg),
    /// Nearest vocabulary words.
    Neighbors {
        word: String,
        #[command(flatten)]
        model: ModelArg,
        #[arg(short, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum AnchorCmd {
    /// Vocabulary words within a cosine threshold of an anchor word.
    Expand {
        word: String,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        threshold: f64,
    },
}

#[derive(Subcommand)]
enum LfCmd {
    /// Write the label matrix of a fold.
    Apply {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long, value_enum, default_value_t = FoldName::Train)]
        fold: FoldName,
    },
    /// Coverage, overlap, conflict and accuracy of each function.
    Report {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long, value_enum, default_value_t = FoldName::Train)]
        fold: FoldName,
    },
}

#[derive(Subcommand)]
enum LabelModelCmd {
    /// Fit on the training matrix.
    Fit(TaskArg),
    /// Write probabilistic labels of a fold.
    Apply {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long, value_enum, default_value_t = FoldName::Train)]
        fold: FoldName,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceName {
    Model,
    LabelModel,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluate a fold of this task against its ground truth.
    #[arg(long, conflicts_with_all = ["scores", "gold"])]
    task: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FoldName::Test)]
    fold: FoldName,
    /// Which scores of the fold to evaluate.
    #[arg(long, value_enum, default_value_t = SourceName::Model)]
    source: SourceName,
    /// Scores file (group_id, probability per line).
    #[arg(long, requires = "gold", required_unless_present = "task")]
    scores: Option<PathBuf>,
    /// Gold file (group_id, label per line).
    #[arg(long, requires = "scores")]
    gold: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the report as JSON here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StreamCmd {
    /// Append transactions (and optionally signups) to topic files.
    Publish {
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "transactions")]
        topic: String,
        /// Also emit one signup event per account to this topic.
        #[arg(long)]
        signup_topic: Option<String>,
        /// Only publish the first N accounts.
        #[arg(long)]
        accounts: Option<usize>,
    },
    /// Consume input topics and emit prediction events.
    Run {
        #[command(flatten)]
        task: TaskArg,
        /// Stream settings: topics, batching policy, readiness rule.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        topics: PathBuf,
        /// Watcher cache and committed offsets.
        #[arg(long)]
        state: PathBuf,
        /// Poll once and exit.
        #[arg(long)]
        once: bool,
        /// Exit after this many idle seconds.
        #[arg(long)]
        idle_exit: Option<f64>,
        #[arg(long, default_value_t = 200)]
        poll_interval_ms: u64,
        #[arg(long)]
        allow_code_mismatch: bool,
    },
}

fn print(json: bool, report: &impl Report) {
    if json {
        println!("{}", report.json());
    } else {
        print!("{}", report.text());
    }
}

fn write_report(path: &Path, report: &impl Report) -> Result<()> {
    std::fs::write(path, report.json() + "\n").map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| Error::Runtime(format!("cannot configure thread pool: {e}")))?;
    }
    let ctx = Context {
        deterministic: cli.deterministic,
        store: cli.store.clone(),
        code_version: match &cli.code_version {
            Some(v) => v.clone(),
            None => executable_hash()?,
        },
    };
    let json = cli.json;
    match cli.command {
        Command::Synth(SynthCmd::Generate { config, out }) => print(json, &tools::synth_generate(&config, &out)?),
        Command::Prep { input, output } => print(json, &tools::prep(&input, &output)?),
        Command::Split(t) => print(json, &pipeline::split_task(&t.load()?)?),
        Command::Embed(EmbedCmd::Train(t)) => print(json, &pipeline::embed_train(&ctx, &t.load()?)?),
        Command::Embed(EmbedCmd::Neighbors { word, model, k }) => print(json, &tools::neighbors(&model.path()?, &word, k)?),
        Command::Anchor(AnchorCmd::Expand { word, model, threshold }) => {
            print(json, &tools::anchor_expand(&model.path()?, &word, threshold)?)
        }
        Command::Lf(LfCmd::Apply { task, fold }) => print(json, &pipeline::lf_apply(&task.load()?, fold.into())?),
        Command::Lf(LfCmd::Report { task, fold }) => print(json, &pipeline::lf_report_task(&task.load()?, fold.into())?),
        Command::Labelmodel(LabelModelCmd::Fit(t)) => print(json, &pipeline::labelmodel_fit(&t.load()?)?),
        Command::Labelmodel(LabelModelCmd::Apply { task, fold }) => {
            print(json, &pipeline::labelmodel_apply(&task.load()?, fold.into())?)
        }
        Command::Train { task, runs, rank } => print(json, &pipeline::train(&ctx, &task.load()?, runs, rank)?),
        Command::Predict {
            task,
            fold,
            input,
            output,
            allow_code_mismatch,
        } => print(
            json,
            &pipeline::predict(&ctx, &task.load()?, fold.fold.into(), input, output, allow_code_mismatch)?,
        ),
        Command::Eval(a) => {
            let report = match (&a.task, &a.scores, &a.gold) {
                (Some(t), _, _) => {
                    let source = match a.source {
                        SourceName::Model => ScoreSource::Model,
                        SourceName::LabelModel => ScoreSource::LabelModel,
                    };
                    pipeline::eval_task(&TaskSpec::load(t)?, a.fold.into(), source, a.threshold)?
                }
                (None, Some(s), Some(g)) => pipeline::eval_files(s, g, a.threshold)?,
                _ => return Err(Error::Config("eval needs --task, or --scores with --gold".into())),
            };
            if let Some(out) = &a.output {
                write_report(out, &report)?;
            }
            print(json, &report);
        }
        Command::Stream(StreamCmd::Publish {
            topics,
            input,
            topic,
            signup_topic,
            accounts,
        }) => print(json, &streaming::publish(&topics, &input, &topic, signup_topic.as_deref(), accounts)?),
        Command::Stream(StreamCmd::Run {
            task,
            config,
            topics,
            state,
            once,
            idle_exit,
            poll_interval_ms,
            allow_code_mismatch,
        }) => {
            let spec = task.load()?;
            let cfg = streaming::load_stream_config(&config)?;
            let opts = RunOptions {
                once,
                idle_exit,
                poll_interval: Duration::from_millis(poll_interval_ms),
                allow_mismatch: allow_code_mismatch,
            };
            print(json, &streaming::run(&ctx, &spec, cfg, &topics, &state, &opts)?);
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
