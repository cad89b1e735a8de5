//! `uprop`: run, score, evaluate, simulate and report.
//!
//! The pipeline is file-mediated. `run` writes a JSON Lines trajectory file;
//! `score` turns it into per-task uncertainty columns; `eval` computes
//! metrics from scores; `report` builds metric tables, sweeps and
//! step-fraction charts from trajectories; `simulate` runs the exact-oracle
//! convergence experiment. Exit codes: 0 success, 1 runtime error, 2 usage.

mod commands;
mod config;
mod fsio;
mod plan;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "uprop", version, about = "Trajectory-level uncertainty for LLM decision processes")]
#[command(args_override_self = true)]
pub struct Cli {
    /// TOML file with one table per subcommand; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a run plan and write trajectories.
    Run(RunArgs),
    /// Score trajectories with UProp and baselines.
    Score(ScoreArgs),
    /// Compute metrics from a scores file.
    Eval(EvalArgs),
    /// Convergence experiment on an exact process table.
    Simulate(SimulateArgs),
    /// Metric table, sampling sweep and step-fraction chart.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "FILE")]
    pub plan: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Realize the step decision proportionally to sequence probability.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PmiModeArg {
    Faithful,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IuModeArg {
    Pe,
    LnPe,
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[arg(long, value_enum, default_value = "faithful")]
    pub pmi_mode: PmiModeArg,
    #[arg(long, value_enum, default_value = "pe")]
    pub iu_mode: IuModeArg,
    /// Distance to the greedy answer under which a TDP counts as matching.
    #[arg(long, default_value_t = uprop_core::estimators::DEFAULT_MATCH_THRESHOLD)]
    pub match_threshold: f64,
    /// Average UProp over all TDPs regardless of their answers.
    #[arg(long)]
    pub no_answer_filter: bool,
    #[arg(long, default_value_t = uprop_core::baselines::DEFAULT_SIM_THRESHOLD)]
    pub sim_threshold: f64,
    /// Accept unknown fields in trajectory records.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Comma-separated: uprop and/or baselines (ppl, ls, pe, se, deg, sd, sentsar).
    #[arg(long, value_delimiter = ',', default_value = "uprop")]
    pub method: Vec<String>,
    /// Comma-separated step aggregations for baselines: avg, rms.
    #[arg(long, value_delimiter = ',', default_value = "avg")]
    pub agg: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "auroc,auarc,success_rate")]
    pub metrics: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub table: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
    pub z_grid: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "faithful")]
    pub pmi_mode: PmiModeArg,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Z,
    N,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trajectory file (sweeps re-score truncated copies of it).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Scores file whose columns pick the methods when --method is absent.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_value = "avg")]
    pub agg: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "auroc,auarc,success_rate")]
    pub metrics: Vec<String>,
    #[arg(long, value_enum)]
    pub sweep: Option<SweepArg>,
    /// Sweep values; defaults to 2..=the recorded maximum.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn execute<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
