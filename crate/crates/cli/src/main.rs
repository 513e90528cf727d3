//! memlens: lag-resolved memory profiling for sequential decision logs.

mod analyze;
mod filter;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use memlens::capacity::{
    verify_lower_bound, BoundOutcome, JointPolicyModel, DEFAULT_SEARCH_BUDGET,
};
use memlens::synth::{generate, EnvKind, EnvSpec};
use memlens::{discretize_rewards, load_dataset, write_dataset, Estimator};

#[derive(Parser)]
#[command(
    name = "memlens",
    version,
    about = "Estimates how much past information a policy's actions use, lag by lag"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile memory use of logged episodes into CSV and optional SVG
    Analyze(AnalyzeArgs),
    /// Generate synthetic episodes with known memory structure
    Synth(SynthArgs),
    /// Exact memory capacity and information bound for a joint model file
    Capacity(CapacityArgs),
    /// Quantile-bin numeric rewards into discrete tokens
    Discretize(DiscretizeArgs),
}

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    /// JSONL episode file, or a directory of .jsonl files
    #[arg(long)]
    pub input: PathBuf,
    /// Write the CSV report here instead of stdout
    #[arg(long)]
    pub output_csv: Option<PathBuf>,
    /// Write an SVG bar-chart report here
    #[arg(long)]
    pub output_svg: Option<PathBuf>,
    /// Deepest lag of the profile
    #[arg(long, default_value_t = 3)]
    pub max_lag: usize,
    /// Entropy estimator: grassberger or plugin
    #[arg(long, default_value = "grassberger")]
    pub estimator: Estimator,
    /// Resampling replicates per lag
    #[arg(long, default_value_t = 100)]
    pub permutations: usize,
    /// Significance level of the resampling test
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Seed for the resampling tests
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Earliest decision step to sample; defaults to max_lag + 1
    #[arg(long)]
    pub min_t: Option<usize>,
    /// History restriction, e.g. 'x[t-1] == 0 && x[t] == 1'
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Environment family: markov, parity, delayed_cue, noisy_copy
    #[arg(long)]
    pub env: EnvKind,
    /// Output JSONL path
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Steps per episode
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Observation and action alphabet size
    #[arg(long, default_value_t = 2)]
    pub alphabet_size: usize,
    /// Uniform-mixing weight for markov and noisy_copy
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// delayed_cue only: carry the cue in the first reward
    #[arg(long)]
    pub reward_cue: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct CapacityArgs {
    /// Joint model JSON file
    #[arg(long)]
    pub input: PathBuf,
    /// Largest state count the search will try
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
    /// Node budget for the capacity search
    #[arg(long, default_value_t = DEFAULT_SEARCH_BUDGET)]
    pub budget: u64,
}

#[derive(clap::Args)]
pub struct DiscretizeArgs {
    /// JSONL episode file with numeric rewards
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL path
    #[arg(long)]
    pub output: PathBuf,
    /// Number of quantile bins
    #[arg(long, default_value_t = 4)]
    pub bins: usize,
}

/// Command failures, split by where the fault lies so the exit code
/// can follow: 1 bad input or flags, 2 nothing to estimate, 3 search
/// budget exhausted.
#[derive(Debug)]
pub enum CliError {
    Lib(memlens::Error),
    Usage(String),
}

impl From<memlens::Error> for CliError {
    fn from(err: memlens::Error) -> Self {
        CliError::Lib(err)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(err) => err.fmt(f),
            CliError::Usage(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(memlens::Error::NoEligibleSamples { .. }) => 2,
            CliError::Lib(memlens::Error::BudgetExceeded { .. }) => 3,
            _ => 1,
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| memlens::Error::io(path, e).into())
}

fn init_threads() {
    if let Some(n) = std::env::var("MEMLENS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = EnvSpec {
        kind: args.env,
        horizon: args.horizon,
        alphabet_size: args.alphabet_size,
        noise: args.noise,
        reward_cue: args.reward_cue,
        seed: args.seed,
    };
    let dataset = generate(&spec, args.episodes)?;
    write_dataset(&dataset, &args.output)?;
    Ok(())
}

fn run_capacity(args: &CapacityArgs) -> Result<(), CliError> {
    let model = JointPolicyModel::load(&args.input)?;
    match verify_lower_bound(&model, args.k_max, &[], args.budget)? {
        BoundOutcome::Verified(report) => {
            println!("capacity: {}", report.capacity);
            println!("ln_capacity_nats: {:.12}", report.ln_capacity);
            let mut all_hold = true;
            for check in &report.checks {
                all_hold &= check.holds;
                println!(
                    "t={} chain_sum_nats={:.12} gap_nats={:.12} {}",
                    check.t,
                    check.chain_sum,
                    check.gap,
                    if check.holds { "ok" } else { "violated" }
                );
            }
            println!("bound: {}", if all_hold { "holds" } else { "violated" });
        }
        BoundOutcome::CapacityExceedsKMax { k_max } => {
            println!("capacity: exceeds --k-max {k_max}");
            println!("bound: not evaluated; raise --k-max to keep searching");
        }
    }
    Ok(())
}

fn is_quantile_token(token: &str) -> bool {
    token
        .strip_prefix('q')
        .map(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        .unwrap_or(false)
}

fn run_discretize(args: &DiscretizeArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.input)?;
    if dataset
        .r_alphabet()
        .tokens()
        .iter()
        .all(|t| is_quantile_token(t))
    {
        return Err(CliError::Usage(
            "rewards are already discretized into quantile bins; discretize would be a no-op"
                .into(),
        ));
    }
    let binned = discretize_rewards(&dataset, args.bins)?;
    write_dataset(&binned, &args.output)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(args) => analyze::run(&args),
        Command::Synth(args) => run_synth(&args),
        Command::Capacity(args) => run_capacity(&args),
        Command::Discretize(args) => run_discretize(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
