use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uavtwin_cli::commands::{cmd_eval, cmd_ledger_sim, cmd_probe, cmd_scene_gen, cmd_sweep, cmd_train};
use uavtwin_cli::probe::Variable;
use uavtwin_cli::sweep::Grid;
use uavtwin_cli::{CliError, Overrides, RunConfig};

/// Urban radio digital twin: UAV placement by PPO, oracle sweeps and a
/// simulated compute ledger.
#[derive(Parser)]
#[command(name = "uavtwin", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured scene and write it as text.
    SceneGen {
        /// Destination file (default: <out>/scene.txt).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a PPO agent; writes episodes.csv, policy.ckpt and SVG plots.
    Train,
    /// Greedy rollout of a saved policy.
    Eval {
        /// Checkpoint to load (default: <out>/policy.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate every point of an NXxNYxNZ lattice over the flight bounds.
    Sweep {
        #[arg(long, default_value = "11x11x5")]
        grid: Grid,
    },
    /// Drive tasks through the ledger and audit the event log.
    LedgerSim {
        /// Overrides `ledger.tasks`.
        #[arg(long)]
        tasks: Option<usize>,
        /// Overrides `ledger.fault_rate`.
        #[arg(long)]
        fault_rate: Option<f64>,
    },
    /// Fit how operation counters scale with one of E, T, R, W.
    Probe {
        #[arg(long)]
        var: Variable,
        /// At least three values, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
    };
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    Ok(match cli.command {
        Command::SceneGen { output } => cmd_scene_gen(&cfg, output.as_deref())?.to_string(),
        Command::Train => cmd_train(&cfg)?.to_string(),
        Command::Eval { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| cfg.output.dir.join("policy.ckpt"));
            cmd_eval(&cfg, &path)?.to_string()
        }
        Command::Sweep { grid } => cmd_sweep(&cfg, grid)?.to_string(),
        Command::LedgerSim { tasks, fault_rate } => {
            if let Some(t) = tasks {
                cfg.ledger.tasks = t;
            }
            if let Some(f) = fault_rate {
                cfg.ledger.fault_rate = f;
            }
            cmd_ledger_sim(&cfg)?.to_string()
        }
        Command::Probe { var, values } => cmd_probe(&cfg, var, &values)?.to_string(),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
