use clap::{Parser, Subcommand};
use rdsmc_cli::{config, report, runner};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rdsmc",
    about = "Reverse-diffusion sequential Monte Carlo experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate of an experiment config and write result files.
    Run { config: PathBuf },
    /// Check a config file and echo the resolved effective configuration.
    Validate { config: PathBuf },
    /// Aggregate results.csv tables under a directory into one comparison table.
    Report { dir: PathBuf },
}

fn init_workers() {
    if let Ok(workers) = std::env::var("RDSMC_WORKERS") {
        if let Ok(n) = workers.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config: path } => {
            let config = match config::load_config(&path) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return ExitCode::from(2);
                }
            };
            let output_override = std::env::var_os("RDSMC_OUTPUT_DIR").map(PathBuf::from);
            match runner::run_experiment(&config, output_override.as_deref()) {
                Ok(outcome) => {
                    let failed = outcome
                        .replicates
                        .iter()
                        .filter(|r| r.degenerate)
                        .count();
                    println!(
                        "{}: {} replicates ({} failed) -> {}",
                        config.name,
                        outcome.replicates.len(),
                        failed,
                        outcome.results_path.display()
                    );
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Validate { config: path } => {
            let report = match config::validate_config(&path) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("cannot read config: {e:#}");
                    return ExitCode::from(2);
                }
            };
            for key in &report.unknown_keys {
                println!("unknown key: {key}");
            }
            for violation in &report.violations {
                println!("violation: {violation}");
            }
            if report.is_clean() {
                println!("ok: no violations");
            }
            if let Some(resolved) = &report.resolved {
                println!("--- effective config ---");
                print!("{resolved}");
            }
            ExitCode::SUCCESS
        }
        Command::Report { dir } => match report::aggregate(&dir) {
            Ok(rows) => {
                print!("{}", report::render(&rows));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("report error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}
