use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tspec::{run, Command, ExperimentConfig, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "tspec", version, about = "Spectral asymptotics of tensor products and small-ball experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Exact counting function on t_grid.
    Count,
    /// Asymptotic prediction on t_grid.
    Predict,
    /// Exact vs predicted counts; exits 1 if the last decade misses tolerances.ratio.
    Compare,
    /// Which asymptotic regime applies, as JSON.
    Classify,
    /// Log small-ball probabilities on eps_grid.
    Smalldev,
    /// Monte Carlo small-ball probabilities on eps_grid.
    Mc,
    /// Exponent fit and periodicity report, as JSON.
    Fit,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Count => Command::Count,
            Cmd::Predict => Command::Predict,
            Cmd::Compare => Command::Compare,
            Cmd::Classify => Command::Classify,
            Cmd::Smalldev => Command::Smalldev,
            Cmd::Mc => Command::Mc,
            Cmd::Fit => Command::Fit,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("tspec: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, tspec::CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| tspec::CliError::Config(format!("--threads: {e}")))?;
    }
    let path = cli.config.as_ref().ok_or_else(|| tspec::CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out = run(cli.command.into(), &config)?;
    match &cli.out {
        Some(p) => std::fs::write(p, &out.text)?,
        None => print!("{}", out.text),
    }
    if out.status == tspec::EXIT_UNSUPPORTED {
        eprintln!("tspec: no supported asymptotic regime applies; see the report for details");
    }
    Ok(out.status)
}
