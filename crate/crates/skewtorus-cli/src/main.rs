//! Command-line front end: selects experiments, applies config
//! overrides, executes a run, and maps the outcome onto exit codes.
//!
//! Exit codes: 0 every selected check passed, 1 at least one check
//! failed, 2 configuration or runtime error.

use clap::{Parser, Subcommand};
use skewtorus::config::RunConfig;
use skewtorus::runner::{run, RunStatus};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "skewtorus",
    version,
    about = "Experiment runner for a partially hyperbolic skew product on the 4-torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Master RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count override; 1 is the bit-exactness reference,
    /// 0 the scheduler default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Coupling strength override.
    #[arg(long, global = true)]
    n: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Center and full Lyapunov exponent estimates.
    Exponents,
    /// Pliss-time oracle comparison, density identity, set measures.
    Pliss,
    /// Cone containment, expansion, and transversality batteries.
    Cones,
    /// Piece census and bounded-distortion checks along u-curves.
    Ucurve,
    /// Birkhoff/Hopf agreement, correlation decay, leaf density, probes.
    Ergodicity,
    /// Re-runs the headline checks under a shear perturbation.
    Perturb,
    /// Direct vs decomposed integral equivalence at enumerable N.
    #[command(name = "formula-check")]
    FormulaCheck,
    /// Every experiment in canonical order.
    All,
}

impl Command {
    fn selection(&self) -> Vec<String> {
        let name = match self {
            Command::Exponents => "exponents",
            Command::Pliss => "pliss",
            Command::Cones => "cones",
            Command::Ucurve => "ucurve",
            Command::Ergodicity => "ergodicity",
            Command::Perturb => "perturb",
            Command::FormulaCheck => "formula-check",
            Command::All => "all",
        };
        vec![name.to_string()]
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    cfg.experiments.run = cli.command.selection();
    cfg.apply_overrides(cli.n, cli.seed, cli.out.as_deref(), cli.threads);
    let manifest = run(&cfg)?;
    for rec in &manifest.experiments {
        let tag = match rec.status {
            RunStatus::Passed => "PASS",
            RunStatus::Failed => "FAIL",
            RunStatus::Error => "ERROR",
        };
        println!("{tag:5} {:<13} {:>6} ms  {}", rec.name, rec.elapsed_ms, rec.detail);
    }
    println!("artifacts: {}", manifest.run_dir);
    let errored = manifest.error_count > 0;
    let failed = manifest
        .experiments
        .iter()
        .any(|r| r.status == RunStatus::Failed);
    Ok(if errored {
        ExitCode::from(2)
    } else if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}
