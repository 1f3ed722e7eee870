use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covdetect::par;
use covdetect_harness::{run, ExperimentConfig, ExperimentKind, OutputFormat};

#[derive(Parser)]
#[command(name = "covdetect", version, about = "Run covariance-based activity detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (flat TOML). Output files are accepted too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "COVDETECT_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Identifiability success fractions over an (L, K) grid.
    Phase,
    /// Phase sweep on the lifted data-embedding problem.
    PhaseEmbed,
    /// Predicted and simulated ROC curves of one instance.
    Roc,
    /// Predicted and simulated estimation-error densities.
    ErrorDist,
    /// Equal-error probability of each solver arm over an L sweep.
    CompareNnls,
    /// Joint activity and data detection.
    Joint,
}

impl From<Command> for ExperimentKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Phase => ExperimentKind::Phase,
            Command::PhaseEmbed => ExperimentKind::PhaseEmbed,
            Command::Roc => ExperimentKind::Roc,
            Command::ErrorDist => ExperimentKind::ErrorDist,
            Command::CompareNnls => ExperimentKind::CompareNnls,
            Command::Joint => ExperimentKind::Joint,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> Result<(), String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ExperimentConfig::parse(&src).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(cli.command.into());
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    if let Some(format) = cli.format {
        cfg.format = format;
    }
    if cfg.seed.is_none() {
        return Err("a seed is required (--seed or `seed` in the config)".into());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err("--threads must be positive".into());
        }
        par::set_threads(n)?;
    }
    let record = run(&cfg).map_err(|e| e.to_string())?;
    let paths = record.write(std::path::Path::new(&cfg.out), cfg.format).map_err(|e| e.to_string())?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}
