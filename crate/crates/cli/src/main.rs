use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod cate;
mod common;
mod monitor;
mod report;
mod scan;
mod simulate;

use common::{NullArg, OrderArg, UsageError, VarianceArg};

/// Worker-thread count for the parallel parts of every subcommand.
const THREADS_ENV: &str = "SHIFTWATCH_THREADS";

#[derive(Parser)]
#[command(name = "shiftwatch", version, about = "Covariate-shift and concept-drift detection for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test tables from a shift scenario.
    Simulate(SimulateArgs),
    /// Find records of the test table whose features shifted from training.
    Scan(ScanArgs),
    /// Estimate per-record treatment effects between a control and a treatment table.
    Cate(CateArgs),
    /// Run windowed shift monitoring over a stream.
    Monitor(MonitorArgs),
    /// Re-emit a report as JSON or flatten it to CSV.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario JSON file; the built-in `booking-surge` when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
    /// Test rows leaked into training (the scenario's leak fraction).
    #[arg(long)]
    pub out_leaked: Option<PathBuf>,
    /// Schema describing the generated columns.
    #[arg(long)]
    pub out_schema: Option<PathBuf>,
    /// Manifest report; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScanOptions {
    #[arg(long, default_value_t = 0.5)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 50)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub peel_rounds: usize,
    #[arg(long, default_value_t = 99)]
    pub null_replicas: usize,
    /// Randomization-test level.
    #[arg(long, default_value_t = 0.05)]
    pub significance: f64,
    /// Flag only the first significant subset.
    #[arg(long)]
    pub single_scan: bool,
    /// Whether null replicas also refit the baseline.
    #[arg(long, value_enum, default_value_t = NullArg::Refit)]
    pub null: NullArg,
    /// Quantile bins for numeric features.
    #[arg(long, default_value_t = 4)]
    pub bins: usize,
    /// Category ordering: rarest first, or highest bin first.
    #[arg(long, value_enum, default_value_t = OrderArg::Rarity)]
    pub order: OrderArg,
}

#[derive(Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Comma-separated attributes to scan; schema features by default.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[command(flatten)]
    pub scan: ScanOptions,
    #[arg(long, default_value_t = 20)]
    pub histogram_bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ForestOptions {
    #[arg(long, default_value_t = 200)]
    pub trees: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sample_fraction: f64,
    /// Trees per little bag.
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    /// Minimum treated and control records per leaf.
    #[arg(long, default_value_t = 5)]
    pub min_arm: usize,
    /// Covariates tried per split; ceil(sqrt(m)) when omitted.
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    /// Little-bag variance correction: posterior mean, or clipped difference.
    #[arg(long, value_enum, default_value_t = VarianceArg::Bayes)]
    pub variance: VarianceArg,
}

#[derive(Args)]
pub struct CateArgs {
    /// Control-period (D = 0) table.
    #[arg(long)]
    pub control: PathBuf,
    /// Treatment-period (D = 1) table.
    #[arg(long)]
    pub treatment: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Table to label; the treatment table when omitted.
    #[arg(long)]
    pub classify: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub forest: ForestOptions,
    #[arg(long, default_value_t = 20)]
    pub histogram_bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub window: usize,
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Consecutive breaching windows needed to confirm a shift.
    #[arg(long, default_value_t = 3)]
    pub persist: usize,
    #[arg(long, default_value_t = 500)]
    pub min_treatment: usize,
    /// Attributes scanned for covariate shift; schema features by default.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Forest covariates; schema features by default.
    #[arg(long, value_delimiter = ',')]
    pub forest_features: Vec<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[command(flatten)]
    pub scan: ScanOptions,
    #[command(flatten)]
    pub forest: ForestOptions,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| common::usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Scan(a) => scan::run(&a),
        Command::Cate(a) => cate::run(&a),
        Command::Monitor(a) => monitor::run(&a),
        Command::Report(a) => report::run(&a),
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<shiftwatch_core::Error>() {
        Some(e) if !e.is_data_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
