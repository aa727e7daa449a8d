use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nslab::experiments::{check_report, run_experiment, ExperimentConfig, Summary};
use nslab::problems::registry;

/// Nonsmooth stochastic optimization experiments.
#[derive(Parser)]
#[command(name = "nslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run { config: PathBuf },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// List the built-in problems.
    ListProblems,
    /// Re-check a finished output directory.
    Report { dir: PathBuf },
}

fn print_checks(summary: &Summary) {
    for c in &summary.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let tag = if c.gating { "" } else { " (info)" };
        println!("{status} {}: {:.6e} {} {:.6e}{tag}", c.name, c.value, c.comparison, c.threshold);
    }
    for e in &summary.errors {
        println!("ERROR {e}");
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("invalid config {}", path.display()))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let ok = match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let summary = run_experiment(&cfg).context("experiment failed")?;
            print_checks(&summary);
            println!("content hash {}", summary.content_hash);
            println!("wrote {}", cfg.output_dir.display());
            summary.all_passed
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok: {} -> {}", cfg.experiment.kind(), cfg.output_dir.display());
            true
        }
        Command::ListProblems => {
            for (name, spec) in registry() {
                let p = spec.build_unchecked()?;
                let dist = if p.atoms().is_some() { "finite" } else { "continuous" };
                println!("{name}\tdim {}\t{dist}", p.w_dim());
            }
            true
        }
        Command::Report { dir } => {
            let report = check_report(&dir).with_context(|| format!("cannot read report in {}", dir.display()))?;
            println!("{} ({})", report.summary.experiment, dir.display());
            print_checks(&report.summary);
            for f in &report.mismatched {
                println!("MODIFIED {f}");
            }
            if !report.content_hash_ok {
                println!("content hash mismatch");
            }
            report.ok()
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
