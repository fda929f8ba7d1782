//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 runtime error,
//! 4 divergence.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use forgefl::checkpoint::describe_checkpoint;
use forgefl::config::load_config;
use forgefl::federation::run_experiment;
use forgefl::presets::{run_preset, Preset};
use forgefl::Error;

#[derive(Parser)]
#[command(name = "forgefl", version, about = "Desk-scale federated optimization engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        /// Path to a key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: ./run_out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named preset grid with default settings.
    Preset {
        /// One of: table2_fedprox_sweep, table4_ablation,
        /// table5_sensitivity, fig2_collapse.
        name: String,
        /// Output directory (default: ./<name>_out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's header and basic statistics.
    Inspect {
        checkpoint: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::ConfigParse { .. } => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out_dir = out.unwrap_or_else(|| PathBuf::from("run_out"));
            let artifacts = run_experiment(&cfg, Some(&out_dir))?;
            println!(
                "completed {} rounds: final_global_loss={} collapse_score={}",
                artifacts.summary.rounds_completed,
                artifacts.summary.final_global_loss,
                artifacts.summary.final_collapse_score
            );
            println!("artifacts in {}", out_dir.display());
            Ok(())
        }
        Command::Preset { name, out } => {
            let preset = Preset::from_str(&name)?;
            let base = forgefl::FederationConfig::default();
            let out_dir = out.unwrap_or_else(|| PathBuf::from(format!("{}_out", preset.name())));
            let report = run_preset(preset, &base, &out_dir)?;
            for cell in &report.cells {
                match cell.final_global_loss {
                    Some(loss) => println!("{}: {} final_global_loss={loss}", cell.name, cell.status),
                    None => println!("{}: {}", cell.name, cell.status),
                }
            }
            println!("grid summary in {}", out_dir.join("grid_summary.json").display());
            Ok(())
        }
        Command::Inspect { checkpoint } => {
            print!("{}", describe_checkpoint(&checkpoint)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
