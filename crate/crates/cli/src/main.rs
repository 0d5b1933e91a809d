use std::path::PathBuf;
use std::process::ExitCode;

use boundary_map::error::MapError;
use boundary_map::icp::ConstraintMode;
use boundary_map::pipeline::{run_pipeline, Mode, PipelineConfig};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Sim,
    Detect,
    Optimize,
    Learn,
    Eval,
    Full,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Self {
        match c {
            Command::Sim => Mode::Simulate,
            Command::Detect => Mode::Detect,
            Command::Optimize => Mode::Optimize,
            Command::Learn => Mode::Learn,
            Command::Eval => Mode::Evaluate,
            Command::Full => Mode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Original,
    Adjusted,
}

/// Map a closed environment from boundary-following odometry.
#[derive(Debug, Parser)]
#[command(name = "map", version)]
struct Args {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    mode: Command,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loop-closure constraint model.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut cfg = match PipelineConfig::from_file(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: cannot load config {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    cfg.mode = args.mode.into();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(b) = args.baseline {
        cfg.baseline = match b {
            Baseline::Original => ConstraintMode::Original,
            Baseline::Adjusted => ConstraintMode::Adjusted,
        };
    }
    match run_pipeline(&cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ MapError::Stage { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_STAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
