//! Deterministic experiment runner for the attention-bias laboratory.
//!
//! Exit codes: 0 all verdicts pass, 1 verdict failure, 2 configuration
//! error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attnbias::config::{parse_config, Engine, ExperimentConfig};
use attnbias::runner::run_experiment;
use attnbias::Error;

#[derive(Parser)]
#[command(name = "attnbias", version, about = "Attention-bias numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key-value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Seed override (precedence: flag > ATTNBIAS_SEED > config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replica-count override applied to every engine.
        #[arg(long)]
        replicas: Option<usize>,
        /// Worker threads for replica parallelism (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the full verification grid with its calibrated defaults.
    Accept {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "accept-out")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the available experiment engines.
    ListEngines,
}

const EXIT_VERDICT_FAILURE: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;
const EXIT_RUNTIME_ERROR: u8 = 3;

fn env_seed() -> Option<u64> {
    let raw = std::env::var("ATTNBIAS_SEED").ok()?;
    match raw.parse() {
        Ok(seed) => Some(seed),
        Err(_) => {
            eprintln!("warning: ignoring unparseable ATTNBIAS_SEED '{raw}'");
            None
        }
    }
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    replicas: Option<usize>,
) {
    // Precedence: CLI flag > environment > config file.
    if let Some(seed) = seed.or_else(env_seed) {
        cfg.override_seed(seed);
    }
    if let Some(out) = out {
        cfg.override_output_dir(out);
    }
    if let Some(replicas) = replicas {
        cfg.override_replicas(replicas);
    }
}

fn execute(cfg: &ExperimentConfig, threads: Option<usize>) -> ExitCode {
    let run = || match run_experiment(cfg) {
        Ok((manifest, outcomes)) => {
            for o in &outcomes {
                println!(
                    "{:<16} {}  ({})",
                    o.engine,
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
            }
            println!(
                "results in {} (config hash {})",
                cfg.output_dir.display(),
                manifest.config_hash
            );
            if manifest.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERDICT_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME_ERROR)
        }
    };
    match threads {
        None => run(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: failed to build thread pool: {e}");
                ExitCode::from(EXIT_RUNTIME_ERROR)
            }
        },
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            replicas,
            threads,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return ExitCode::from(EXIT_CONFIG_ERROR);
                }
            };
            let mut cfg = match parse_config(&text) {
                Ok(c) => c,
                Err(Error::Config(errors)) => {
                    for e in &errors {
                        eprintln!("config error: {e}");
                    }
                    return ExitCode::from(EXIT_CONFIG_ERROR);
                }
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG_ERROR);
                }
            };
            apply_overrides(&mut cfg, seed, out, replicas);
            execute(&cfg, threads)
        }
        Command::Accept { seed, out, threads } => {
            // The verification grid is the all-engines run with its
            // calibrated defaults.
            let mut cfg = parse_config("experiment = all\nseed = 42\n")
                .expect("builtin config is valid");
            apply_overrides(&mut cfg, seed, Some(out), None);
            execute(&cfg, threads)
        }
        Command::ListEngines => {
            for name in Engine::NAMES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}
