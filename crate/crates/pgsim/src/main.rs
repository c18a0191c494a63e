use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pgsim::config::{load_config, ExperimentConfig, Preset};
use pgsim::experiment::run_experiment;

/// Propagation-graph MIMO channel simulator.
#[derive(Parser)]
#[command(name = "pgsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset experiment.
    Run {
        /// JSON config file; omitted fields take the reference defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset to run (overrides the config).
        #[arg(long)]
        preset: Option<String>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Realization count M (overrides the config).
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// List available presets.
    Presets,
}

fn init_thread_pool() {
    if let Ok(threads) = std::env::var("PGSIM_THREADS") {
        match threads.parse::<usize>() {
            Ok(0) | Err(_) => {}
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> pgsim::Result<()> {
    match cli.command {
        Command::Presets => {
            for preset in Preset::ALL {
                println!("{:<21} {}", preset.name(), preset.description());
            }
            Ok(())
        }
        Command::Run {
            config,
            preset,
            seed,
            out,
            realizations,
        } => {
            let mut config = match config {
                Some(path) => load_config(&path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(preset) = preset {
                config.preset = preset;
            }
            if let Some(seed) = seed {
                config.master_seed = seed;
            }
            if let Some(out) = out {
                config.output_dir = out;
            }
            if let Some(m) = realizations {
                config.realizations = m;
            }
            let manifest = run_experiment(&config)?;
            for warning in &manifest.warnings {
                eprintln!("warning: {warning}");
            }
            for output in &manifest.outputs {
                println!("{}", config.output_dir.join(output).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
