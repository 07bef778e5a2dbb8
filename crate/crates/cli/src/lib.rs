//! Reproducible command-line runs over `rrmdp-core`.
//!
//! Every run resolves its configuration (file, then `--set key=value`, then
//! dedicated flags), rejects unknown keys, and writes `manifest.json` with
//! the resolved configuration next to its outputs.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "rrmdp", version, about = "Reward-robust tabular MDP toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// More logging (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nominal and robust return of a policy.
    Evaluate(EvalArgs),
    /// Full worst-case reward report of a policy.
    WorstReward(EvalArgs),
    /// Model-based robust policy gradient.
    Train(Common),
    /// Alpha sweep comparing uncertainty sets by CVaR.
    Sweep(Common),
    /// Online two-timescale actor-critic.
    Ac(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Flavor {
    Coupled,
    SRect,
    SaRect,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Coupled => rrmdp_core::uncertainty::COUPLED,
            Flavor::SRect => rrmdp_core::uncertainty::S_RECT,
            Flavor::SaRect => rrmdp_core::uncertainty::SA_RECT,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "rrmdp-out")]
    pub out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Norm order of the ball, a number >= 1 or `inf`.
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long, value_enum)]
    pub flavor: Option<Flavor>,
    /// Override any configuration key, e.g. `--set pg.max_iters=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// MDP file.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    /// Policy file, or a checkpoint holding one.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    // RUST_LOG still wins when set
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_logging(cli.verbose);
    match cli.command {
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::WorstReward(args) => commands::worst_reward(&args),
        Command::Train(args) => commands::train(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Ac(args) => commands::ac(&args),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}
