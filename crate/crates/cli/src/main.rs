//! `tc-alloc`: solve, validate, and compare time-consistent allocation
//! strategies from a flat key = value configuration file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use tc_alloc::config::RunKind;
use tc_alloc::runner;

#[derive(Parser)]
#[command(
    name = "tc-alloc",
    version,
    about = "Time-consistent allocation runs",
    long_about = "Solves equilibrium allocation strategies and writes CSV tables.\n\
                  Run kinds: solve (strategy table), validate (Monte Carlo versus \n\
                  closed forms), figure1 (scenario-to-baseline allocation ratios), \n\
                  mv-compare (solver versus the mean-variance closed form).\n\
                  Set TC_ALLOC_THREADS to cap the worker thread count."
)]
struct Cli {
    /// What to compute.
    #[arg(value_enum)]
    run_kind: RunKindArg,
    /// Run configuration file (flat `key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the run's CSV files (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Simulation seed override (validate runs only).
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation path count override (validate runs only).
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunKindArg {
    Solve,
    Validate,
    #[value(name = "figure1")]
    Figure1,
    MvCompare,
}

impl From<RunKindArg> for RunKind {
    fn from(arg: RunKindArg) -> Self {
        match arg {
            RunKindArg::Solve => RunKind::Solve,
            RunKindArg::Validate => RunKind::Validate,
            RunKindArg::Figure1 => RunKind::Figure1,
            RunKindArg::MvCompare => RunKind::MvCompare,
        }
    }
}

/// Applies TC_ALLOC_THREADS to the global worker pool before any parallel
/// work starts. Absent or empty means the default (one worker per core).
fn init_threads() -> Result<(), String> {
    let value = match std::env::var("TC_ALLOC_THREADS") {
        Ok(value) if !value.trim().is_empty() => value,
        Ok(_) | Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(err) => return Err(format!("TC_ALLOC_THREADS: {err}")),
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("TC_ALLOC_THREADS must be a positive integer, got `{value}`"))?;
    if threads == 0 {
        return Err("TC_ALLOC_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|err| format!("cannot configure the thread pool: {err}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(message) = init_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(2);
    }
    match runner::run(cli.run_kind.into(), &cli.config, &cli.out, cli.seed, cli.paths) {
        Ok(report) => {
            for (path, rows) in &report.outputs {
                println!("wrote {} ({rows} rows)", path.display());
            }
            for line in &report.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
