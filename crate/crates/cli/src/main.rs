//! `rankpilot`: per-layer SVD rank search from the command line.
//!
//! Exit codes: 0 success, 1 I/O failure writing artifacts, 2 invalid configuration or input,
//! 3 evaluator failure, 4 numerical failure, 5 empty result.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rankpilot::evaluator::external::DEFAULT_TIMEOUT_SECS;
use rankpilot::evaluator::Split;
use serde_json::Value;

use config::{EvaluatorBinding, Override, RunConfig};
use exit::CliResult;

#[derive(Debug, Parser)]
#[command(name = "rankpilot", version, about = "Per-layer SVD rank search with a learned controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration whose `mode` matches the subcommand.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides a scalar config field, e.g. `--set reward.target_speedup=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<Override>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvaluatorArgs {
    /// Toy profile seed (ignored with --external).
    #[arg(long, default_value_t = 0)]
    toy_seed: u64,
    /// Toy profile split.
    #[arg(long, default_value = "dev", value_parser = parse_split)]
    split: Split,
    /// External evaluator command and its arguments.
    #[arg(long, num_args = 1.., allow_hyphen_values = true, value_name = "CMD")]
    external: Option<Vec<String>>,
    /// Dataset id passed to the external evaluator.
    #[arg(long, default_value = "dev")]
    dataset: String,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECS)]
    timeout_secs: u64,
}

impl EvaluatorArgs {
    fn binding(&self) -> EvaluatorBinding {
        match &self.external {
            Some(command) => EvaluatorBinding::External {
                command: command.clone(),
                dataset: self.dataset.clone(),
                timeout_secs: self.timeout_secs,
            },
            None => EvaluatorBinding::Toy { profile_seed: self.toy_seed, split: self.split },
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown split `{s}` (train, dev, test)"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the bundled toy profile and write its model and summary.
    Toy(ConfigArgs),
    /// Single-layer sensitivity sweep, written as CSV.
    Sweep(ConfigArgs),
    /// Build a search space from per-layer energies.
    Space(ConfigArgs),
    /// Run the controller search; writes log, checkpoint and explored set.
    Search(ConfigArgs),
    /// Select a condensed proxy set and write its manifest.
    Condense(ConfigArgs),
    /// Re-evaluate the top-k searched schemes on a holdout and report the best.
    Select(ConfigArgs),
    /// Rebuild a search run's final controller from its log.
    Replay {
        /// Output directory of the search run.
        #[arg(long)]
        dir: PathBuf,
        /// Where to write the rebuilt checkpoint (default: <dir>/replayed.lrcp).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a rank scheme (or one energy to every searchable layer) to a model file.
    Compress {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated ranks, one per searchable layer; 0 leaves a layer dense.
        #[arg(long, conflicts_with = "energy")]
        scheme: Option<String>,
        #[arg(long)]
        energy: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        evaluator: EvaluatorArgs,
        /// Include per-sample errors in the output.
        #[arg(long)]
        per_sample: bool,
    },
    /// Fine-tune a model file on the toy profile's training split.
    Retrain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        toy_seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a search log to `step,speedup,error,rejected` CSV.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs, mode: &str) -> CliResult<RunConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(Override { path: "seed".into(), value: Value::from(seed) });
    }
    config::load(&args.config, &overrides, mode)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Toy(args) => match load_config(args, "toy")? {
            ref resolved @ RunConfig::Toy(ref run) => commands::toy(run, resolved),
            _ => unreachable!("mode checked on load"),
        },
        Command::Sweep(args) => match load_config(args, "sweep")? {
            RunConfig::Sweep(run) => commands::sweep(&run),
            _ => unreachable!("mode checked on load"),
        },
        Command::Space(args) => match load_config(args, "space")? {
            RunConfig::Space(run) => commands::space(&run),
            _ => unreachable!("mode checked on load"),
        },
        Command::Search(args) => match load_config(args, "search")? {
            ref resolved @ RunConfig::Search(ref run) => commands::search(run, resolved),
            _ => unreachable!("mode checked on load"),
        },
        Command::Condense(args) => match load_config(args, "condense")? {
            RunConfig::Condense(run) => commands::condense(&run),
            _ => unreachable!("mode checked on load"),
        },
        Command::Select(args) => match load_config(args, "select")? {
            RunConfig::Select(run) => commands::select(&run),
            _ => unreachable!("mode checked on load"),
        },
        Command::Replay { dir, out } => commands::replay(dir, out.as_deref()),
        Command::Compress { model, scheme, energy, out } => commands::compress(model, scheme.as_deref(), *energy, out),
        Command::Eval { model, evaluator, per_sample } => commands::eval(model, &evaluator.binding(), *per_sample),
        Command::Retrain { model, toy_seed, epochs, seed, out } => commands::retrain_model(model, *toy_seed, *epochs, *seed, out),
        Command::Report { log, out } => commands::report(log, out.as_ref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
