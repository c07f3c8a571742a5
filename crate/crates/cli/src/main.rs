use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use linsde_cli::{run, RunConfig};

/// Linearised-SDE experiments driven by a JSON config file.
#[derive(Debug, Parser)]
#[command(name = "linsde", version)]
struct Args {
    /// Path to the run configuration (JSON).
    config: PathBuf,
    /// Overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = RunConfig::load(&args.config).and_then(|mut config| {
        if let Some(seed) = args.seed {
            config.simulation.seed = seed;
        }
        if let Some(w) = args.workers {
            config.workers = w;
        }
        if let Some(out) = args.out {
            config.output_dir = out;
        }
        run(&config)
    });
    match result {
        Ok(artifacts) => {
            for f in &artifacts.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("linsde: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
