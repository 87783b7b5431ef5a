use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elpd_diff::cli::{self, CommandOutput, RunConfig};
use elpd_diff::{Error, Result};

/// Subsampled LOO-CV elpd estimation and model comparison.
#[derive(Parser)]
#[command(name = "elpd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a BLR dataset with exact posterior draws, log-likelihood and exact LOO values.
    Simulate(RunConfig),
    /// Compute a surrogate π̃ for every observation and write it as CSV.
    Surrogate(RunConfig),
    /// Estimate elpd_loo of one model from a subsample.
    Estimate(RunConfig),
    /// Estimate the elpd difference of two models on a shared subsample.
    Compare(RunConfig),
    /// Repeat the estimate over independent subsamples and summarise.
    Replicate(RunConfig),
    /// Check estimator unbiasedness by enumerating all subsamples of small populations.
    Verify(RunConfig),
}

type Handler = fn(&RunConfig) -> Result<CommandOutput>;

fn run(command: Command) -> Result<CommandOutput> {
    let (config, run, writes_files): (RunConfig, Handler, bool) = match command {
        Command::Simulate(c) => (c, cli::cmd_simulate, true),
        Command::Surrogate(c) => (c, cli::cmd_surrogate, true),
        Command::Estimate(c) => (c, cli::cmd_estimate, false),
        Command::Compare(c) => (c, cli::cmd_compare, false),
        Command::Replicate(c) => (c, cli::cmd_replicate, false),
        Command::Verify(c) => (c, cli::cmd_verify, false),
    };
    let config = config.resolve()?;
    let output = match config.threads {
        Some(0) => return Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?
            .install(|| run(&config))?,
        None => run(&config)?,
    };
    if let Some(text) = cli::emit(writes_files, &config, &output)? {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(output) if output.failed => {
            eprintln!("error: verification failed");
            ExitCode::from(4)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
