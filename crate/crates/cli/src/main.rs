use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use disk_cli::commands::{self, format_summary};
use disk_cli::{exit_code, RunConfig};

#[derive(Parser)]
#[command(name = "disk", version, about = "Distributed kriging on random data subsets")]
struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "disk_out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training/test data and the true surface.
    Generate,
    /// Split the training rows into k random subsets.
    Partition,
    /// Run one MCMC chain per subset.
    Fit,
    /// Average subset quantiles into the DISK posterior.
    Combine,
    /// Score the DISK posterior against the truth.
    Evaluate,
    /// Risk-versus-n study for the rank-5 degenerate kernel.
    RiskStudy,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = || -> disk_core::Result<commands::Summary> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        let out = &cli.out;
        match cli.command {
            Command::Generate => commands::generate(&cfg, out),
            Command::Partition => commands::partition(&cfg, out),
            Command::Fit => commands::fit(&cfg, out),
            Command::Combine => commands::combine(&cfg, out),
            Command::Evaluate => commands::evaluate(&cfg, out),
            Command::RiskStudy => commands::risk_study(&cfg, out),
        }
    };
    match run() {
        Ok(summary) => {
            print!("{}", format_summary(&summary));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
