//! Scenario runner for the mean-field game laboratory.
//!
//! Exit codes: 0 all checks passed, 2 configuration error, 3 numerical
//! failure or failed checks, 4 degenerate model, 5 internal error.

use clap::{Parser, Subcommand};
use mfg_lab::config::validate_config;
use mfg_lab::error::Error;
use mfg_lab::runner::{list_examples, run_scenario, BUNDLED_EXAMPLES};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mfg-lab", version, about = "mean-field game numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario configuration and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config's out_dir, then $MFG_LAB_OUT,
        /// then ./mfg-lab-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a scenario configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the bundled example configurations.
    Examples {
        /// Write the bundled configurations into a directory.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, seed } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(Error::Io(e)),
            };
            let mut cfg = match validate_config(&text) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out_dir = out
                .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
                .or_else(|| std::env::var("MFG_LAB_OUT").ok().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("mfg-lab-out"));
            match run_scenario(&cfg, &out_dir) {
                Ok(report) => {
                    for check in &report.checks {
                        println!(
                            "[{}] {}: {}",
                            if check.passed { "pass" } else { "FAIL" },
                            check.name,
                            check.detail
                        );
                    }
                    println!(
                        "{}: {} outputs in {} ({:.2}s)",
                        report.scenario,
                        report.outputs.len(),
                        out_dir.display(),
                        report.wall_time_s
                    );
                    if report.all_passed() {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("error: one or more checks failed");
                        ExitCode::from(3)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(Error::Io(e)),
            };
            match validate_config(&text) {
                Ok(cfg) => {
                    println!("ok: {} scenario", cfg.scenario_kind().unwrap_or("unknown"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Examples { emit } => {
            for (name, description) in list_examples() {
                println!("{name} — {description}");
            }
            if let Some(dir) = emit {
                if let Err(e) = std::fs::create_dir_all(&dir) {
                    return fail(Error::Io(e));
                }
                for (name, _, text) in BUNDLED_EXAMPLES {
                    if let Err(e) = std::fs::write(dir.join(name), text) {
                        return fail(Error::Io(e));
                    }
                }
                println!(
                    "wrote {} configs to {}",
                    BUNDLED_EXAMPLES.len(),
                    dir.display()
                );
            }
            ExitCode::SUCCESS
        }
    }
}
