mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use commands::CliError;
use config::Settings;

/// Cross-task in-context manipulation toolkit.
#[derive(Parser, Debug)]
#[command(name = "xicm", version, about)]
struct Cli {
    /// Flat key=value config file (e.g. `gateway.timeout=30`).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed for generation, scenes, training and benchmark runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print every setting with its source (default, file, env, flag) and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Only log errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scripted demonstrations of seen toy tasks.
    Simgen(SimgenArgs),
    /// Load and validate a dataset, printing its size and digest.
    Ingest(DataArgs),
    /// Write the key-actions of every demonstration as JSONL.
    ExtractKeyframes(KeyframeArgs),
    /// Write observed features (initial frame, final frame, language) for predictor training.
    Embed(EmbedArgs),
    /// Train the future-feature predictor; optionally export pool features.
    TrainDynamics(TrainArgs),
    /// Rank seen demonstrations for a query.
    Select(QueryCmdArgs),
    /// Build the in-context prompt for a query.
    Prompt(PromptArgs),
    /// Query a backend for a task's key-actions.
    Predict(PredictArgs),
    /// Run one seeded episode of a task.
    Rollout(RolloutArgs),
    /// Run the seeded benchmark protocol and write report.json/csv/md.
    Bench(BenchCmdArgs),
    /// Compare dynamics-guided and random selection under identical seeds.
    Ablate(BenchCmdArgs),
    /// Benchmark several K values under identical seeds.
    SweepK(SweepArgs),
    /// Re-render a saved report after recomputing its statistics from the episode log.
    Report(ReportArgs),
}

type Flags = Vec<(&'static str, String)>;

fn push<T: ToString>(flags: &mut Flags, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        flags.push((key, v.to_string()));
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset root (manifest.json plus one JSONL file per task).
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
}

impl DataArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "dataset", &self.dataset.as_ref().map(|p| p.display()));
    }
}

#[derive(Args, Debug)]
struct SimgenArgs {
    /// Task selector: seen, or a comma-separated list of seen task names.
    #[arg(long, default_value = "seen")]
    tasks: String,
    /// Demonstrations per task.
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Output dataset root (defaults to the `dataset` setting).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Rendered image side in pixels.
    #[arg(long)]
    image_size: Option<u32>,
}

#[derive(Args, Debug)]
struct KeyframeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Joint-velocity threshold for stationary frames.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output JSONL path, `-` for stdout.
    #[arg(long, default_value = "keyframes.jsonl")]
    out: String,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output feature file.
    #[arg(long, default_value = "features.bin")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Observed feature file from `embed`; computed from the dataset when absent.
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,
    /// Output predictor (JSON).
    #[arg(long, default_value = "predictor.json")]
    out: PathBuf,
    /// Also write pool features in the configured feature mode.
    #[arg(long, value_name = "PATH")]
    pool_out: Option<PathBuf>,
    /// Feature mode of the exported pool.
    #[arg(long)]
    mode: Option<String>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden units.
    #[arg(long)]
    hidden: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct RetrievalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained predictor JSON; a default predictor is trained when absent.
    #[arg(long, value_name = "PATH")]
    predictor: Option<PathBuf>,
    /// Precomputed pool features (from `train-dynamics --pool-out`).
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,
    /// Feature mode: vis_out, vis_in, lang, vis_out+lang, vis_in+lang, vis_in+vis_out, all.
    #[arg(long)]
    mode: Option<String>,
    /// Number of demonstrations in the prompt.
    #[arg(long)]
    k: Option<usize>,
    /// dynamics or random.
    #[arg(long)]
    selection: Option<String>,
}

impl RetrievalArgs {
    fn flags(&self, f: &mut Flags) {
        self.data.flags(f);
        push(f, "predictor", &self.predictor.as_ref().map(|p| p.display()));
        push(f, "features", &self.features.as_ref().map(|p| p.display()));
        push(f, "feature_mode", &self.mode);
        push(f, "k", &self.k);
        push(f, "selection", &self.selection);
    }
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct QueryArgs {
    /// Toy task whose seeded scene is the query.
    #[arg(long)]
    task: Option<String>,
    /// Instruction text; matched to a toy task when possible.
    #[arg(long)]
    query: Option<String>,
}

#[derive(Args, Debug)]
struct QueryCmdArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    query: QueryArgs,
}

#[derive(Args, Debug)]
struct PromptArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Print the rendered prompt text instead of the JSON bundle.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GatewayArgs {
    /// echo, scripted (oracle replay), prose, or http.
    #[arg(long)]
    backend: Option<String>,
    /// Chat-completions base URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent with each request.
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Retries after the first attempt.
    #[arg(long)]
    max_retries: Option<u32>,
    /// Maximum requests in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Response cache directory.
    #[arg(long, value_name = "PATH")]
    cache_dir: Option<PathBuf>,
}

impl GatewayArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "backend", &self.backend);
        push(f, "gateway.endpoint", &self.endpoint);
        push(f, "gateway.model", &self.model);
        push(f, "gateway.temperature", &self.temperature);
        push(f, "gateway.timeout", &self.timeout);
        push(f, "gateway.max_retries", &self.max_retries);
        push(f, "gateway.concurrency", &self.concurrency);
        push(f, "gateway.cache_dir", &self.cache_dir.as_ref().map(|p| p.display()));
    }
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    gateway: GatewayArgs,
    /// Toy task to roll out.
    #[arg(long)]
    task: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Task selector: all, seen, unseen, unseen_level1, unseen_level2, or a comma list.
    #[arg(long)]
    tasks: Option<String>,
    /// Number of seeded runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Rollouts per run.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Comma-separated run seeds; derived from --seed when absent.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl BenchArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "bench.tasks", &self.tasks);
        push(f, "bench.runs", &self.runs);
        push(f, "bench.rollouts", &self.rollouts);
        push(f, "bench.seeds", &self.seeds);
        push(f, "bench.out", &self.out.as_ref().map(|p| p.display()));
    }
}

#[derive(Args, Debug)]
struct BenchCmdArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    gateway: GatewayArgs,
    #[command(flatten)]
    bench: BenchArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: BenchCmdArgs,
    /// Comma-separated K values.
    #[arg(long, default_value = "1,2,4,8,12,18")]
    k_values: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json written by `bench` (defaults to <bench.out>/report.json).
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// md, csv or json.
    #[arg(long, default_value = "md")]
    format: String,
}

impl Command {
    fn flags(&self) -> Flags {
        let mut f = Flags::new();
        match self {
            Command::Simgen(a) => {
                push(&mut f, "sim.image_size", &a.image_size);
                push(&mut f, "dataset", &a.out.as_ref().map(|p| p.display()));
            }
            Command::Ingest(a) => a.flags(&mut f),
            Command::ExtractKeyframes(a) => {
                a.data.flags(&mut f);
                push(&mut f, "epsilon", &a.epsilon);
            }
            Command::Embed(a) => a.data.flags(&mut f),
            Command::TrainDynamics(a) => {
                a.data.flags(&mut f);
                push(&mut f, "feature_mode", &a.mode);
                push(&mut f, "train.epochs", &a.epochs);
                push(&mut f, "train.learning_rate", &a.lr);
                push(&mut f, "train.hidden", &a.hidden);
                push(&mut f, "train.batch_size", &a.batch_size);
            }
            Command::Select(a) => a.retrieval.flags(&mut f),
            Command::Prompt(a) => a.retrieval.flags(&mut f),
            Command::Predict(a) => {
                a.retrieval.flags(&mut f);
                a.gateway.flags(&mut f);
            }
            Command::Rollout(a) => {
                a.retrieval.flags(&mut f);
                a.gateway.flags(&mut f);
            }
            Command::Bench(a) | Command::Ablate(a) | Command::SweepK(SweepArgs { run: a, .. }) => {
                a.retrieval.flags(&mut f);
                a.gateway.flags(&mut f);
                a.bench.flags(&mut f);
            }
            Command::Report(_) => {}
        }
        f
    }
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::defaults();
    if let Some(path) = &cli.config {
        s.apply_file(path).map_err(|e| CliError::usage(e.0))?;
    }
    s.apply_env(|name| std::env::var(name).ok());
    let mut flags = cli.command.as_ref().map(Command::flags).unwrap_or_default();
    push(&mut flags, "seed", &cli.seed);
    s.apply_flags(&flags).map_err(|e| CliError::usage(e.0))?;
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = settings(&cli)?;
    if cli.print_config {
        print!("{}", s.provenance());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::usage("a subcommand is required"));
    };
    match command {
        Command::Simgen(a) => commands::simgen(&s, &a.tasks, a.episodes),
        Command::Ingest(_) => commands::ingest(&s),
        Command::ExtractKeyframes(a) => commands::extract_keyframes(&s, &a.out),
        Command::Embed(a) => commands::embed(&s, &a.out),
        Command::TrainDynamics(a) => commands::train_dynamics(&s, a.features.as_deref(), &a.out, a.pool_out.as_deref()),
        Command::Select(a) => commands::select(&s, &a.query.into()),
        Command::Prompt(a) => commands::prompt(&s, &a.query.into(), a.dry_run),
        Command::Predict(a) => commands::predict(&s, &a.query.into()),
        Command::Rollout(a) => commands::rollout(&s, &a.task),
        Command::Bench(_) => commands::bench(&s),
        Command::Ablate(_) => commands::ablate(&s),
        Command::SweepK(a) => commands::sweep(&s, &a.k_values),
        Command::Report(a) => commands::report(&s, a.input.as_deref(), &a.format),
    }
}

impl From<QueryArgs> for commands::QuerySpec {
    fn from(q: QueryArgs) -> Self {
        match (q.task, q.query) {
            (Some(t), _) => commands::QuerySpec::Task(t),
            (None, Some(text)) => commands::QuerySpec::Text(text),
            (None, None) => unreachable!("clap enforces one of --task/--query"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            CliError::usage(first).report();
            eprintln!("{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}
