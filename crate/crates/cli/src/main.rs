use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdecert::config::{load_config, ExperimentConfig, LANGEVIN_DEMO_SEED};
use sdecert::run::{run, RunOptions, RunOutcome};

#[derive(Parser)]
#[command(
    name = "sdecert",
    version,
    about = "SDE Lyapunov certificate checks and Monte Carlo stability estimates"
)]
struct Cli {
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads. Affects speed only, never output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, then print it with defaults resolved.
    CheckConfig { path: PathBuf },
    /// Run every phase of a config and write the reports.
    Run { path: PathBuf },
    /// Reproduce the Langevin example `dx = alpha x dt + beta dW`.
    LangevinDemo {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        beta: f64,
    },
}

fn print_outcome(outcome: &RunOutcome, dir: &std::path::Path) {
    let s = &outcome.summary;
    if let Some(c) = &s.certificates.exp {
        println!(
            "exp certificate: {:?}, r = {:.6}, rate = {}, stable = {}",
            c.verdict,
            c.radius.unwrap_or(f64::NAN),
            c.rate_bound.unwrap_or(f64::NAN),
            c.stable.unwrap_or(false)
        );
        for cond in c.conditions.iter().filter(|c| !c.passed()) {
            println!(
                "  {}: {} violations of {}",
                cond.name,
                cond.violations.len(),
                cond.inequality
            );
        }
    }
    if let Some(c) = &s.certificates.practical {
        println!("practical certificate: {:?}", c.verdict);
        for cond in c.conditions.iter().filter(|c| !c.passed()) {
            println!(
                "  {}: {} violations of {}",
                cond.name,
                cond.violations.len(),
                cond.inequality
            );
        }
    }
    for e in s
        .estimates
        .iter()
        .chain(s.martingale.as_ref().map(|m| &m.estimate))
    {
        println!(
            "{}: p_hat = {} [{:.5}, {:.5}] ({} trials, {} diverged)",
            e.name, e.p_hat, e.lo, e.hi, e.trials, e.diverged
        );
    }
    if let Some(x) = &s.exponent {
        println!(
            "exponent: median slope {:?}, p90 slope {:?}, entered {:.3}, fitted {}/{}",
            x.median_slope, x.p90_slope, x.entered_fraction, x.fitted, x.trials
        );
    }
    for e in &s.expectations {
        println!(
            "[{}] {}: expected {}, observed {}",
            if e.passed { "pass" } else { "FAIL" },
            e.check,
            e.expected,
            e.observed
        );
    }
    println!("wrote {} files to {}", outcome.files.len(), dir.display());
}

fn execute(cli: &Cli, mut config: ExperimentConfig) -> ExitCode {
    if let Some(seed) = cli.seed {
        config.ensemble.seed = seed;
    }
    let dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());
    match run(
        &config,
        &dir,
        RunOptions {
            threads: cli.threads,
        },
    ) {
        Ok(outcome) => {
            print_outcome(&outcome, &dir);
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::CheckConfig { path } => match load_config(path) {
            Ok(config) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&config).expect("config serializes")
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { path } => match load_config(path) {
            Ok(config) => execute(&cli, config),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::LangevinDemo { alpha, beta } => {
            let config = ExperimentConfig::langevin_example(*alpha, *beta, LANGEVIN_DEMO_SEED);
            match config.validate() {
                Ok(()) => execute(&cli, config),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
