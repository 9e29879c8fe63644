use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use recurrent_lab::cli::{emit_report, run_experiment, Command, DiagnoseKind, RunConfig, RunOptions};

/// Simulation and adaptive drift estimation for recurrent diffusions.
#[derive(Parser)]
#[command(name = "recurrent-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and validate a config, printing it with all defaults resolved.
    Validate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Simulate paths and write per-checkpoint summaries.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write one binary dump per replicate.
        #[arg(long)]
        dump: bool,
    },
    /// Run the adaptive drift estimator on every replicate.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a diagnostic (`diagnose:<kind>` is accepted as well).
    Diagnose {
        #[arg(value_parser = parse_kind)]
        kind: DiagnoseKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Estimation error over the configured horizon grid and its rate fit.
    RateStudy {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarize a finished run directory.
    Report { dir: PathBuf },
}

fn parse_kind(s: &str) -> Result<DiagnoseKind, String> {
    s.parse()
}

fn load(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.sim.seed = seed;
    }
    if let Some(out) = &run.out {
        cfg.output.directory = out.clone();
    }
    Ok(cfg)
}

fn execute(run: &RunArgs, command: Command, dump: bool) -> Result<()> {
    let cfg = load(run)?;
    if let Some(n) = run.workers {
        anyhow::ensure!(n >= 1, "--workers must be at least 1");
    }
    let opts = RunOptions {
        workers: run.workers,
        dump,
    };
    let m = run_experiment(&cfg, command, &opts)?;
    log::info!(
        "wrote {} files to {} in {:.1} s",
        m.files.len(),
        cfg.output.directory.display(),
        m.wall_clock_seconds
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Validate { run } => {
            let cfg = load(&run)?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Cmd::Simulate { run, dump } => execute(&run, Command::Simulate, dump),
        Cmd::Estimate { run } => execute(&run, Command::Estimate, false),
        Cmd::Diagnose { kind, run } => execute(&run, Command::Diagnose(kind), false),
        Cmd::RateStudy { run } => execute(&run, Command::RateStudy, false),
        Cmd::Report { dir } => {
            print!("{}", emit_report(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // `diagnose:tightness` is the same as `diagnose tightness`
    let args = std::env::args().flat_map(|a| match a.strip_prefix("diagnose:") {
        Some(kind) => vec!["diagnose".to_string(), kind.to_string()],
        None => vec![a],
    });
    match run(Cli::parse_from(args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
