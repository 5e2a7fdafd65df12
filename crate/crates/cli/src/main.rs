//! `sigrisk`: simulate, prepare, match, screen, fit, score, evaluate, report
//! and recover, one stage per subcommand, communicating through CSV and JSON
//! files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

mod commands;
mod error;
mod output;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sigrisk", version, about = "Crash-risk modelling at signalized intersections")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat sampler non-convergence (R-hat >= 1.1) as an error.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the five detector streams and injected crashes from a scenario.
    Simulate(SimulateArgs),
    /// Apply the crash eligibility filter.
    Prepare(PrepareArgs),
    /// Sample matched controls and extract features for every event.
    Match(MatchArgs),
    /// Pairwise Pearson and MIC screening with greedy pruning.
    Screen(ScreenArgs),
    /// Bayesian conditional logit by random-walk Metropolis.
    Fit(FitArgs),
    /// Odds-ratio scores of every event against its stratum's controls.
    Score(ScoreArgs),
    /// ROC curve and AUC of a scores file.
    Evaluate(EvaluateArgs),
    /// Descriptive statistics by variable, group and slice.
    Report(ReportArgs),
    /// Repeated simulate-to-fit runs compared with the injected coefficients.
    Recover(RecoverArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory holding intersections.csv and crashes.csv.
    #[arg(long)]
    pub streams: PathBuf,
    /// Crash file to filter instead of `<streams>/crashes.csv`.
    #[arg(long)]
    pub crashes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub streams: PathBuf,
    /// Eligible crashes, usually `prepared_crashes.csv`.
    #[arg(long)]
    pub crashes: PathBuf,
    /// Full crash log for the exclusion window; defaults to
    /// `<streams>/crashes.csv`.
    #[arg(long)]
    pub crash_log: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub exclusion_hours: f64,
    /// Only draw controls within this many weeks of the crash.
    #[arg(long)]
    pub candidate_weeks: Option<u32>,
    /// OAFR settings as JSON.
    #[arg(long)]
    pub oafr: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    pub r: f64,
    #[arg(long, default_value_t = 0.7)]
    pub mic: f64,
    /// Screen only the variables of this slice (1-4) plus slice-free ones.
    #[arg(long)]
    pub slice: Option<u8>,
    /// Skip comparisons of a measure with itself in other slices.
    #[arg(long)]
    pub no_cross_slice: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("variables").args(["vars", "vars_file"])))]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated variable names; with `--slice`, names may omit the
    /// window suffix.
    #[arg(long, value_delimiter = ',')]
    pub vars: Vec<String>,
    /// File with one variable name per line, e.g. a screening retained list.
    #[arg(long)]
    pub vars_file: Option<PathBuf>,
    #[arg(long)]
    pub slice: Option<u8>,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub prior_variance: f64,
    #[arg(long)]
    pub seed: u64,
    /// Sample on standardized covariates.
    #[arg(long)]
    pub standardize: bool,
    /// Backward elimination at this level (0.05 or 0.1) before sampling.
    #[arg(long)]
    pub backward: Option<f64>,
    #[arg(long, default_value = "fitted")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "paper_model"])))]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// One of within_full, within_slice1..4, entrance_full, entrance_slice1..4.
    #[arg(long)]
    pub paper_model: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Location class to fit: within or entrance.
    #[arg(long, default_value = "within")]
    pub class: String,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn: usize,
    #[arg(long, default_value_t = 30)]
    pub min_strata: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::bad_input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::bad_input(format!("thread pool: {e}")))?;
    }
    let strict = cli.strict;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Prepare(a) => commands::prepare(&a),
        Command::Match(a) => commands::match_controls(&a),
        Command::Screen(a) => commands::screen(&a),
        Command::Fit(a) => commands::fit(&a, strict),
        Command::Score(a) => commands::score(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
        Command::Recover(a) => commands::recover(&a, strict),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("{}", CliError::bad_input(line.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
