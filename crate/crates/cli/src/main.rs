use std::path::PathBuf;
use std::process::ExitCode;

use adiapump_cli::config::ExperimentConfig;
use adiapump_cli::experiments::{run_experiment, write_outcome};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adiapump",
    about = "Adiabatic charge-pumping experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Output directory for the CSV/JSON reports (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the configured family by registry name.
        #[arg(long)]
        seed_family: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed_family,
        } => {
            if let Some(n) = jobs {
                // ignore the error if a pool already exists
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let mut cfg = match ExperimentConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(name) = seed_family {
                cfg.family.name = name;
            }
            if let Some(dir) = out {
                cfg.output_dir = Some(dir);
            }
            let outcome = match run_experiment(&cfg) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            for line in &outcome.summary {
                println!("[{}] {line}", outcome.name);
            }
            if let Some(dir) = &cfg.output_dir {
                if let Err(e) = write_outcome(dir, &outcome) {
                    eprintln!("error: cannot write reports: {e}");
                    return ExitCode::from(2);
                }
                println!(
                    "[{}] wrote {}.json and {}.csv to {}",
                    outcome.name,
                    outcome.name,
                    outcome.name,
                    dir.display()
                );
            }
            let status = if outcome.pass {
                "PASS"
            } else if outcome.inconclusive {
                "INCONCLUSIVE"
            } else {
                "FAIL"
            };
            println!("[{}] overall: {status}", outcome.name);
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
