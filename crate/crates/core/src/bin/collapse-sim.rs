use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use collapse_sim::config::{parse_config, RunConfig, ScenarioKind};
use collapse_sim::runner::{run, RunStatus};
use collapse_sim::Error;

/// Objective-collapse simulator: run scenarios and write reproducible artifacts.
#[derive(Parser)]
#[command(name = "collapse-sim", version)]
struct Cli {
    /// Override `ensemble.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override `output.directory`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override `ensemble.n_traj`.
    #[arg(long, global = true, value_name = "N")]
    traj: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    Run { config: PathBuf },
    /// Born-rule linearity scan of the multiplicative walk.
    WalkScan {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Quantum-eraser cross-term sweep.
    Eraser {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Thermal energy-deviation estimate (air at STP by default).
    Thermal {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Grid-refinement conservation suite.
    Conserve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Two-dimensional angular-momentum variant.
        #[arg(long)]
        angular: bool,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn load(path: Option<&PathBuf>, kind: ScenarioKind) -> Result<RunConfig, Error> {
    match path {
        None => Ok(RunConfig::preset(kind)),
        Some(p) => {
            let cfg = parse_config(p)?;
            if cfg.scenario != kind {
                return Err(Error::config(
                    "scenario",
                    format!("expected {}, found {}", kind.name(), cfg.scenario.name()),
                ));
            }
            Ok(cfg)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::NumericalAbort { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match &cli.command {
        Command::Validate { config } => match parse_config(config) {
            Ok(cfg) => {
                println!("{}: valid {} config", config.display(), cfg.scenario.name());
                return ExitCode::SUCCESS;
            }
            Err(e) => Err(e),
        },
        Command::Run { config } => parse_config(config),
        Command::WalkScan { config } => load(config.as_ref(), ScenarioKind::WalkScan),
        Command::Eraser { config } => load(config.as_ref(), ScenarioKind::Eraser),
        Command::Thermal { config } => load(config.as_ref(), ScenarioKind::Thermal),
        Command::Conserve { config, angular } => match (config, angular) {
            (None, true) => Ok(RunConfig::preset_angular_momentum()),
            (c, _) => load(c.as_ref(), ScenarioKind::ConservationSuite),
        },
    };
    let mut cfg = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Some(s) = cli.seed {
        cfg.ensemble.master_seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output.directory = d.display().to_string();
    }
    if let Some(n) = cli.traj {
        cfg.ensemble.n_traj = Some(n);
    }
    match run(&cfg) {
        Ok(outcome) => {
            println!("{}", outcome.summary_line());
            match outcome.status {
                RunStatus::Ok => ExitCode::SUCCESS,
                RunStatus::Aborted { .. } => ExitCode::from(3),
                RunStatus::ChecksFailed { failures } => {
                    for f in failures {
                        eprintln!("check failed: {f}");
                    }
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
