//! `forestfill` command-line driver.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or parse error,
//! 3 I/O error, 4 too many failed replicates or an unimputable column.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forestfill::amputation::{ampute, AmputationSpec, Mechanism};
use forestfill::dataset::{read_csv, write_csv};
use forestfill::harness::{
    read_result_rows, summarize, write_records, write_summary, ResultRow, StrategyName, StudyConfig,
};
use forestfill::imputer::impute;
use forestfill::simulation::run_study;
use forestfill::{Error, ForestParams, ImputerParams, SeedSpec};

#[derive(Parser)]
#[command(
    name = "forestfill",
    version,
    about = "Random-forest imputation and simulation studies"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "FORESTFILL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation study and write per-replicate results plus a summary.
    Simulate(SimulateArgs),
    /// Impute the missing cells of a CSV file.
    Impute(ImputeArgs),
    /// Introduce MAR missingness into a complete CSV file.
    Ampute(AmputeArgs),
    /// Summarise a results CSV per (scenario, pattern, strategy).
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct ImputerFlags {
    #[arg(long, env = "FORESTFILL_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "FORESTFILL_TREES")]
    trees: Option<usize>,
    #[arg(long = "max-iter", env = "FORESTFILL_MAX_ITER")]
    max_iter: Option<usize>,
    #[arg(long, env = "FORESTFILL_CHUNKS")]
    chunks: Option<usize>,
    #[arg(long, env = "FORESTFILL_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML study configuration; built-in defaults when omitted.
    #[arg(long, env = "FORESTFILL_CONFIG")]
    config: Option<PathBuf>,
    /// Results CSV; the summary goes to `<stem>_summary.csv` beside it.
    #[arg(long, env = "FORESTFILL_OUT")]
    out: PathBuf,
    /// Run a single strategy instead of the configured list.
    #[arg(long, value_enum, env = "FORESTFILL_STRATEGY")]
    strategy: Option<StrategyArg>,
    #[command(flatten)]
    imputer: ImputerFlags,
}

#[derive(Args)]
struct ImputeArgs {
    input: PathBuf,
    #[arg(long, env = "FORESTFILL_OUT")]
    out: PathBuf,
    #[arg(
        long,
        value_enum,
        default_value = "sequential",
        env = "FORESTFILL_STRATEGY"
    )]
    strategy: StrategyArg,
    #[command(flatten)]
    imputer: ImputerFlags,
}

#[derive(Args)]
struct AmputeArgs {
    input: PathBuf,
    #[arg(long, env = "FORESTFILL_OUT")]
    out: PathBuf,
    /// Column whose values drive missingness; it stays complete.
    #[arg(long)]
    weight: String,
    /// Columns to make missing, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    columns: Vec<String>,
    #[arg(long, value_enum, default_value = "joint")]
    layout: Layout,
    /// Target fraction of incomplete rows.
    #[arg(long, default_value_t = 0.5)]
    prop: f64,
    #[arg(long, default_value_t = 0, env = "FORESTFILL_SEED")]
    seed: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    input: PathBuf,
    #[arg(long, env = "FORESTFILL_OUT")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Sequential,
    Forests,
    Variables,
}

impl From<StrategyArg> for StrategyName {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Sequential => StrategyName::Sequential,
            StrategyArg::Forests => StrategyName::Forests,
            StrategyArg::Variables => StrategyName::Variables,
        }
    }
}

/// How amputed rows lose the selected columns.
#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    /// All selected columns go missing together.
    Joint,
    /// One selected column, chosen uniformly, goes missing.
    Separate,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Data(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Data(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Data(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::InvalidInput(_)
            | Error::Shape(_) => Failure::Usage(msg),
            Error::Io(_) => Failure::Io(msg),
            Error::TooManyFailures { .. } | Error::UnimputableColumn { .. } => Failure::Data(msg),
            _ => Failure::Other(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush()
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            StudyConfig::from_toml(&text)?
        }
        None => StudyConfig::default(),
    };
    let f = &args.imputer;
    config.master_seed = f.seed.unwrap_or(config.master_seed);
    config.n_trees = f.trees.unwrap_or(config.n_trees);
    config.max_iterations = f.max_iter.unwrap_or(config.max_iterations);
    config.chunks = f.chunks.unwrap_or(config.chunks);
    config.workers = f.workers.unwrap_or(config.workers);
    if let Some(s) = args.strategy {
        config.strategies = vec![s.into()];
    }
    let configs = config.scenario_configs()?;

    let start = Instant::now();
    let step = (configs.iter().map(|c| c.n_replicates).sum::<usize>() / 20).max(1);
    let progress = move |done: usize, total: usize| {
        if done % step == 0 || done == total {
            eprintln!("{done}/{total} replicates");
        }
    };
    let output = run_study(&configs, Some(&progress))?;

    let mut w = create(&args.out)?;
    let rows: Vec<ResultRow> = output.records.iter().map(Into::into).collect();
    write_records(&mut w, &output.records)?;
    finish(w, &args.out)?;
    let summary_out = summary_path(&args.out);
    let mut w = create(&summary_out)?;
    write_summary(&mut w, &summarize(&rows))?;
    finish(w, &summary_out)?;

    eprintln!(
        "{} replicates ({} failed) in {:.1}s",
        output.total_replicates,
        output.failed_replicates,
        start.elapsed().as_secs_f64()
    );
    output.check()?;
    Ok(())
}

fn run_impute(args: ImputeArgs) -> CliResult<()> {
    let (data, mask) = read_csv(open(&args.input)?)?;
    if data.n_cols() < 2 {
        return Err(Failure::Usage("input needs at least two columns".into()));
    }
    let f = &args.imputer;
    let defaults = ImputerParams::default();
    let seed = SeedSpec::new(f.seed.unwrap_or(0));
    let params = ImputerParams {
        forest: ForestParams {
            n_trees: f.trees.unwrap_or(defaults.forest.n_trees),
            ..defaults.forest
        },
        max_iterations: f.max_iter.unwrap_or(defaults.max_iterations),
        seed,
    };
    let strategy = StrategyName::from(args.strategy)
        .with_decomposition(f.chunks.unwrap_or(3), f.workers.unwrap_or(3));
    let result = impute(&data, &mask, &params, strategy)?;

    let mut w = create(&args.out)?;
    write_csv(&mut w, &result.imputed, None)?;
    finish(w, &args.out)?;

    println!("iterations: {}", result.iterations_performed);
    println!("stopped_by: {}", result.stopped_by.label());
    match result.oob_nrmse_final {
        Some(v) => println!("oob_nrmse: {v}"),
        None => println!("oob_nrmse: NA"),
    }
    Ok(())
}

fn column_index(names: &[String], name: &str) -> CliResult<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Failure::Usage(format!("no column named {name:?}")))
}

fn run_ampute(args: AmputeArgs) -> CliResult<()> {
    let (data, mask) = read_csv(open(&args.input)?)?;
    if mask.total_missing() > 0 {
        return Err(Failure::Usage("input already has missing cells".into()));
    }
    let weight_column = column_index(data.names(), &args.weight)?;
    let columns = args
        .columns
        .iter()
        .map(|c| column_index(data.names(), c))
        .collect::<CliResult<Vec<_>>>()?;
    let (patterns, pattern_freq) = match args.layout {
        Layout::Joint => (vec![columns], vec![1.0]),
        Layout::Separate => {
            let k = columns.len() as f64;
            (
                columns.iter().map(|&c| vec![c]).collect(),
                vec![1.0 / k; columns.len()],
            )
        }
    };
    let spec = AmputationSpec {
        patterns,
        pattern_freq,
        weight_column,
        prop: args.prop,
        mechanism: Mechanism::RightTailLogistic,
    };
    let outcome = ampute(&data, &spec, &SeedSpec::new(args.seed))?;

    let mut w = create(&args.out)?;
    write_csv(&mut w, &data, Some(&outcome.mask))?;
    finish(w, &args.out)?;
    println!("incomplete_rows: {}", outcome.mask.incomplete_rows());
    println!("realized_prop: {}", outcome.realized_prop);
    Ok(())
}

fn run_summarize(args: SummarizeArgs) -> CliResult<()> {
    let rows = read_result_rows(open(&args.input)?)?;
    let mut w = create(&args.out)?;
    write_summary(&mut w, &summarize(&rows))?;
    finish(w, &args.out)
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Impute(a) => run_impute(a),
        Command::Ampute(a) => run_ampute(a),
        Command::Summarize(a) => run_summarize(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n.max(1));
    }
    let result = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(Failure::Other(format!("thread pool: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
