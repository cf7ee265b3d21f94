use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snpekit_cli::commands::{cmd_infer, cmd_simulate, run_compare, run_eval, RunOptions};
use snpekit_cli::{CliError, LoadedConfig};

#[derive(Parser)]
#[command(name = "snpekit", version, about = "Likelihood-free inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file, or a preset name for simulate/infer.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for simulation (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw parameters and simulate.
    Simulate(Common),
    /// Run the configured inference method.
    Infer(Common),
    /// Tabulate posteriors of several runs.
    Compare(Common),
    /// Evaluate a posterior's log-density.
    Eval(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Simulate(c) | Command::Infer(c) | Command::Compare(c) | Command::Eval(c)) = &cli.command;
    if let Some(n) = c.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let opts = RunOptions { seed: c.seed, out: c.out.clone() };
    match &cli.command {
        Command::Simulate(_) => {
            let dir = cmd_simulate(&LoadedConfig::load(&c.config)?, &opts)?;
            println!("{}", dir.display());
        }
        Command::Infer(_) => {
            let out = cmd_infer(&LoadedConfig::load(&c.config)?, &opts)?;
            println!("{}", out.dir.display());
            let cov = out.posterior.covariance();
            for (i, (name, m)) in out.posterior.names().iter().zip(out.posterior.mean()).enumerate() {
                println!("{name}\t{m:.4}\t± {:.4}", cov[(i, i)].sqrt());
            }
        }
        Command::Compare(_) => {
            for row in run_compare(c.config.as_ref(), c.out.as_deref())? {
                println!("{}\t{}\t{}\t{:.4}\t{:.4}", row.run, row.method, row.parameter, row.mean, row.sd);
            }
        }
        Command::Eval(_) => {
            println!("{}", run_eval(c.config.as_ref(), c.out.as_deref())?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
