use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ldplab::commands::{self, RunOptions};
use ldplab::config::LoadedConfig;
use ldplab::error::{CliError, EXIT_VERIFICATION};

#[derive(Parser)]
#[command(name = "ldplab", version, about = "Tail probabilities of vanilla and clipped SGD")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite results produced by a different configuration.
    #[arg(long, global = true)]
    force: bool,
    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: appendix-f, sgd-bounded or csgd-pareto.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo ensemble.
    Simulate(Source),
    /// Tail estimates with confidence intervals from a results directory.
    Tail {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<u64>>,
    },
    /// Fit decay-rate families to a tail file.
    Fit {
        #[arg(long)]
        tail: PathBuf,
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<String>,
    },
    /// Check the certified inequalities numerically.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Certified rate functions and decay rates for a configuration.
    Rates(Source),
    /// Certified bound next to published comparison bounds.
    CompareSota(Source),
    /// Tail, fit and a Markdown summary for a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn load(source: &Source, seed: Option<u64>) -> Result<LoadedConfig, CliError> {
    let mut loaded = match (&source.config, &source.preset) {
        (Some(path), _) => commands::read_config_file(path)?,
        (None, Some(name)) => LoadedConfig::from_preset(name)?,
        (None, None) => return Err(CliError::config("pass --config or --preset")),
    };
    if let Some(s) = seed {
        loaded.config.ensemble.seed = s;
    }
    Ok(loaded)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let opts = RunOptions { workers: cli.workers, out: cli.out.clone(), force: cli.force };
    match &cli.command {
        Command::Simulate(src) => {
            let report = commands::cmd_simulate(&load(src, cli.seed)?, &opts)?;
            println!(
                "wrote {} runs to {} (config {})",
                report.runs,
                report.dir.display(),
                report.digest
            );
            if report.diverged > 0 {
                return Err(CliError::new(
                    EXIT_VERIFICATION,
                    format!("{} of {} runs diverged", report.diverged, report.runs),
                ));
            }
        }
        Command::Tail { results, epsilon, t_grid } => {
            let tails = commands::cmd_tail(results, epsilon, t_grid.as_deref())?;
            for tail in tails {
                for i in 0..tail.t_grid.len() {
                    println!(
                        "eps={} t={} p_hat={:.6e} ci=[{:.6e}, {:.6e}]",
                        tail.epsilon, tail.t_grid[i], tail.p_hat[i], tail.ci_low[i], tail.ci_high[i]
                    );
                }
            }
        }
        Command::Fit { tail, candidates } => {
            let out = cli.out.as_deref();
            for (eps, f) in commands::cmd_fit(tail, candidates, out)? {
                println!(
                    "eps={eps} {:<16} slope={:.6e} r2={:.6} points={}",
                    f.candidate, f.slope_hat, f.r_squared, f.points_used
                );
            }
        }
        Command::Verify { suite, samples } => {
            let out = cli.out.clone().unwrap_or_else(|| Path::new("results").join("verify"));
            let result = commands::cmd_verify(suite, *samples, cli.seed.unwrap_or(0), &out);
            if let Ok(rows) = &result {
                print!("{}", commands::format_verify(rows));
            }
            result?;
        }
        Command::Rates(src) => {
            let rows = commands::cmd_rates(&load(src, cli.seed)?, &opts)?;
            println!("{} rate rows written", rows.len());
        }
        Command::CompareSota(src) => {
            let rows = commands::cmd_compare_sota(&load(src, cli.seed)?, &opts)?;
            println!("{} bound rows written", rows.len());
        }
        Command::Report { results } => {
            let path = commands::cmd_report(results)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
