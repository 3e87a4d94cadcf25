use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dicke_work::config::{default_config_text, parse_config};
use dicke_work::runner::{resolve_cache, run_experiment, RunOptions};
use dicke_work::Error;

/// Exact quench work statistics and fluctuation-relation checks for Dicke
/// models with conserved charges.
#[derive(Parser)]
#[command(name = "dicke-work", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment configuration and write its outputs.
    Run {
        /// Path to the TOML configuration.
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads for dense eigendecompositions (default 1; outputs
        /// are byte-stable for a fixed thread count).
        #[arg(long)]
        threads: Option<usize>,
        /// Disable the spectral cache (DICKE_WORK_CACHE overrides its
        /// location).
        #[arg(long)]
        no_cache: bool,
        /// Suppress progress diagnostics on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a configuration, reporting every problem found.
    Validate {
        /// Path to the TOML configuration.
        config: PathBuf,
    },
    /// Print a documented configuration template with all defaults.
    PrintDefaults,
}

fn read_config(path: &PathBuf) -> Result<dicke_work::config::ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config(&text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, output_dir, threads, no_cache, quiet } => {
            (|| -> Result<(), Error> {
                let mut config = read_config(&config)?;
                if let Some(dir) = output_dir {
                    config.outputs.directory = dir;
                }
                match threads.unwrap_or(1) {
                    0 => {
                        return Err(Error::Config(vec![
                            "--threads must be at least 1".to_string()
                        ]))
                    }
                    1 => faer::set_global_parallelism(faer::Par::Seq),
                    n => faer::set_global_parallelism(faer::Par::rayon(n)),
                }
                let options = RunOptions {
                    skip_outputs: false,
                    cache: resolve_cache(&config, no_cache),
                    progress: !quiet,
                };
                let summary = run_experiment(&config, &options)?;
                println!(
                    "wrote {} (fitted Gibbs beta = {:.6e}{})",
                    config.outputs.directory.join("summary.json").display(),
                    summary.fitted_gibbs.beta,
                    match &summary.fitted_gge {
                        Some(gge) => format!(
                            ", fitted GGE beta = {:.6e}, charge betas {:?}",
                            gge.beta,
                            gge.charge_betas
                                .iter()
                                .map(|c| (c.charge.as_str(), c.value))
                                .collect::<Vec<_>>()
                        ),
                        None => String::new(),
                    }
                );
                Ok(())
            })()
        }
        Command::Validate { config } => read_config(&config).map(|_| {
            println!("configuration is valid");
        }),
        Command::PrintDefaults => {
            print!("{}", default_config_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
