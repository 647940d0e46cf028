//! Command-line front end for the dual-sourcing solvers.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{PolicySpec, ProjectSection, RunConfig, TableId};

#[derive(Parser, Debug)]
#[command(name = "dualsource", version, about = "Dual-sourcing inventory control: DP, heuristics and neural controllers")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; required by randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the average-cost MDP by value iteration.
    Dp,
    /// Train a neural controller.
    Train {
        /// Start from this network instead of a fresh one.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Simulate a policy.
    Eval {
        /// Network (.json) or policy table (.csv).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Second policy file to test against on the same demand paths.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Also write a steady-state projection of the policy.
        #[arg(long)]
        project: bool,
    },
    /// Run a grid of instances and append one row per cell to rows.csv.
    Sweep {
        #[arg(long, value_enum)]
        table: Option<TableArg>,
        /// Print the cells without running them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Turn demand series into a per-period demand model.
    Ingest {
        /// CSV with columns period,series_id,demand.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Generate this many synthetic series instead.
        #[arg(long)]
        synthetic: Option<usize>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum TableArg {
    Costs,
    FixedCosts,
    LowService,
}

impl From<TableArg> for TableId {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Costs => TableId::Costs,
            TableArg::FixedCosts => TableId::FixedCosts,
            TableArg::LowService => TableId::LowService,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    match cli.command {
        Command::Dp => commands::dp(&cfg),
        Command::Train { warm_start, epochs } => {
            if warm_start.is_some() {
                cfg.train.warm_start = warm_start;
            }
            if let Some(n) = epochs {
                cfg.train.config.max_epochs = n;
            }
            commands::train_cmd(&cfg)
        }
        Command::Eval { policy, compare, project } => {
            if let Some(p) = policy {
                cfg.eval.policy = Some(PolicySpec::from_path(&p)?);
            }
            if let Some(p) = compare {
                cfg.eval.compare = Some(PolicySpec::from_path(&p)?);
            }
            if project && cfg.eval.project.is_none() {
                cfg.eval.project = Some(ProjectSection::default());
            }
            commands::eval(&cfg)
        }
        Command::Sweep { table, dry_run } => {
            if let Some(t) = table {
                cfg.sweep.table = t.into();
            }
            cfg.sweep.dry_run |= dry_run;
            commands::sweep(&cfg)
        }
        Command::Ingest { input, synthetic } => {
            if input.is_some() || synthetic.is_some() {
                cfg.ingest.input = input;
                cfg.ingest.synthetic_series = synthetic;
            }
            commands::ingest(&cfg)
        }
    }
}

/// 3 for numerical failures (divergence, non-convergence), 2 for everything else the
/// user can fix in the configuration or inputs.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<dualsource::Error>())
        .any(dualsource::Error::is_numeric);
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
