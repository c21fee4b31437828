use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use overlay_mend::{execute, parse_config};

/// Run overlay churn experiments from a key=value manifest.
#[derive(Debug, Parser)]
#[command(name = "overlay-mend", version)]
struct Cli {
    /// Manifest file
    #[arg(long)]
    config: PathBuf,
    /// Override the manifest seed
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs
    #[arg(long, env = "OVERLAY_MEND_JOBS")]
    jobs: Option<usize>,
    /// Write per-run event traces
    #[arg(long)]
    trace: bool,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let mut manifest = match parse_config(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        manifest.config.seed = seed;
    }
    if let Some(out) = cli.out {
        manifest.output_dir = out;
    }
    manifest.trace |= cli.trace;

    match execute(&manifest, cli.jobs) {
        Ok(report) => {
            for f in &report.failures {
                eprintln!("run {} seed {} aborted: {}", f.mode, f.seed, f.error);
            }
            eprintln!("wrote {} files to {}", report.files.len(), manifest.output_dir.display());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
