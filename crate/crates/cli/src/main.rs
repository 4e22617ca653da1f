mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

/// Job-shop scheduling with dispatch rules, an exact solver and learned
/// dispatch policies.
#[derive(Debug, Parser)]
#[command(name = "jsp", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random instances in the standard format.
    Generate(GenerateArgs),
    /// Evaluate dispatch rules on a directory of instances.
    Pdr(PdrArgs),
    /// Solve small instances exactly.
    Oracle(OracleArgs),
    /// Train a policy under a curriculum.
    Train(TrainArgs),
    /// Decode instances with a trained policy.
    Eval(EvalArgs),
    /// Pivot long-form results into an Objective/Gap table.
    Table(TableArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` file; flags on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Auto,
    Standard,
    Taillard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    /// Published upper bounds, looked up by instance name.
    Registry,
    /// Exact optimum from the solver.
    Oracle,
    /// Best of the four dispatch rules.
    BestPdr,
    /// Larger of the longest job and the busiest machine.
    LowerBound,
}

#[derive(Debug, Args)]
pub struct InstanceSource {
    /// Directory of instance files.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    /// Reference makespan for gaps.
    #[arg(long, value_enum, default_value_t = ReferenceArg::Registry)]
    pub reference: ReferenceArg,
    /// Upper-bound CSV (`name,n,m,ub,optimal`); the built-in registry when absent.
    #[arg(long)]
    pub ub: Option<PathBuf>,
    /// Node budget when the reference is the oracle.
    #[arg(long, default_value_t = 5_000_000)]
    pub budget: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory to write into.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PdrArgs {
    /// Comma-separated rules (`spt`, `fddwkr`, `mwkr`, `mopnr`, `random[:seed]`) or `all`.
    #[arg(long, default_value = "all")]
    pub rules: String,
    #[command(flatten)]
    pub source: InstanceSource,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Instance files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    #[arg(long, default_value_t = 5_000_000)]
    pub budget: u64,
    /// Also write `<name>.schedule.csv` for each instance here.
    #[arg(long)]
    pub schedules: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CurriculumArg {
    Icl,
    Ucl,
    Ascl,
    Rascl,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = CurriculumArg::Rascl)]
    pub curriculum: CurriculumArg,
    /// `desk`, `benchmark`, or sizes such as `3x3,4x4,6x6`.
    #[arg(long, default_value = "desk")]
    pub ladder: String,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iterations between threshold checks.
    #[arg(long, default_value_t = 100)]
    pub u: usize,
    /// Iterations between gap-proportional resampling.
    #[arg(long, default_value_t = 100)]
    pub b: usize,
    /// Gap threshold in percent.
    #[arg(long, default_value_t = 10.0)]
    pub t_opt: f64,
    #[arg(long, default_value_t = 3000)]
    pub patience: usize,
    /// ICL iterations per level; `iters / levels` when absent.
    #[arg(long)]
    pub icl_budget: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    /// Frozen test instances per level.
    #[arg(long, default_value_t = 32)]
    pub test_size: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1.0)]
    pub critic_weight: f64,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Checkpoint to start from instead of a fresh network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory for `checkpoint.jspc`, `metrics.csv` and `levels.csv`.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated `greedy`, `sample:N`, `pomo:W`, `beam:K`.
    #[arg(long, default_value = "greedy")]
    pub strategies: String,
    /// Seed of the sampling strategy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Embedding width the checkpoint must have.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Emit long-form records instead of the wide table.
    #[arg(long)]
    pub long: bool,
    #[command(flatten)]
    pub source: InstanceSource,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Long-form CSV files written by `pdr` or `eval --long`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Failures and the exit code each maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<jsp_core::Error> for CliError {
    fn from(e: jsp_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let mut cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let parsed = cmd
        .try_get_matches_from_mut(args)
        .and_then(|m| Ok((Cli::from_arg_matches(&m)?, m)));
    let (cli, matches) = match parsed {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let sub = matches
                .subcommand_name()
                .and_then(|name| cmd.find_subcommand_mut(name));
            let usage = match sub {
                Some(s) => s.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("error: {msg}\n\n{usage}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
