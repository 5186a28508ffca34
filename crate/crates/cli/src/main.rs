use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gramstab_cli::{cmd_gramian, cmd_simulate, cmd_sweep, cmd_verify, load_config, CliError, Overrides};

#[derive(Parser)]
#[command(name = "gramstab", version, about = "Weighted Gramian stabilizers: build, verify, simulate, sweep")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build Q, R from the config and write pack.json
    Gramian(Common),
    /// Check a pack file against the configured system and write verify.json
    Verify {
        #[command(flatten)]
        common: Common,
        /// Pack file (defaults to <out>/pack.json)
        #[arg(long)]
        pack: Option<PathBuf>,
    },
    /// Run the closed loop and write trajectory.csv, decay.json, report.json
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use this pack file instead of building one
        #[arg(long)]
        pack: Option<PathBuf>,
    },
    /// Run one simulation per value of the config's sweep axis and write sweep.csv
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "quad-points")]
    quad_points: Option<usize>,
    /// Decay-rate certification tolerance
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn overrides(&self, pack: Option<PathBuf>) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            quad_points: self.quad_points,
            tol: self.tol,
            pack,
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Gramian(common) => {
            let ov = common.overrides(None);
            cmd_gramian(&load_config(&common.config, &ov)?)
        }
        Command::Verify { common, pack } => {
            let ov = common.overrides(pack);
            cmd_verify(&load_config(&common.config, &ov)?, &ov)
        }
        Command::Simulate { common, pack } => {
            let ov = common.overrides(pack);
            cmd_simulate(&load_config(&common.config, &ov)?, &ov)
        }
        Command::Sweep(common) => {
            let ov = common.overrides(None);
            cmd_sweep(&load_config(&common.config, &ov)?, &ov)
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gramstab: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
