use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rank_sde_cli::{parse_config, run, CliError, Command};

#[derive(Parser)]
#[command(name = "rank-sde", version, about = "Simulate and analyse rank-based interacting SDE systems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate an ensemble; writes trajectory CSVs and status/ensemble records.
    Simulate(Args),
    /// Estimate the strong convergence order.
    Convergence(Args),
    /// Stationary gap statistics of a two-particle system.
    Gap(Args),
    /// Certify the distortion map of a two-particle system.
    TransformCheck(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for ensembles (default: available parallelism).
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

fn execute(cmd: Command, args: Args) -> Result<Vec<PathBuf>, CliError> {
    let cfg = parse_config(&args.config)?;
    let out = args.out.unwrap_or_else(|| cfg.output.directory.clone());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool.build().map_err(|e| CliError::io("starting worker threads", std::io::Error::other(e)))?;
    pool.install(|| run(cmd, &cfg, &out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Gap(a) => (Command::Gap, a),
        Cmd::TransformCheck(a) => (Command::TransformCheck, a),
    };
    match execute(cmd, args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
