//! `qg2`: run simulations, minimum-action problems and rare-event studies
//! from a TOML configuration.
//!
//! Exit status: 0 success, 1 invalid input, 2 numerical abort, 3 a
//! verification check failed.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use qg2_experiments::config::DEFAULT_CONFIG;
use qg2_experiments::{apply_overrides, execute, from_toml_str, rerun_from_manifest, Error, RunSummary, StudyKind};

const EXIT_INVALID: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_FAILED_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "qg2", version, about = "Stochastic two-layer quasi-geostrophic model: simulation, minimum action and rare events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; a built-in two-layer default when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set grid.n=64`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: `output.dir` from the configuration).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replace a previous run in the output directory.
    #[arg(long)]
    overwrite: bool,
    /// Ensemble worker threads (default: available cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic integration from the initial state.
    Simulate(RunArgs),
    /// One stochastic path at `sde.eps`.
    SimulateSde(RunArgs),
    /// Controlled noise-free path for the `[skeleton]` control.
    Skeleton(RunArgs),
    /// Minimum-action control for the `[action]` target.
    MinimizeAction(RunArgs),
    /// Crude Monte Carlo probability of the `[event]`.
    Mc(RunArgs),
    /// Importance-sampling probability of the `[event]`.
    Is(RunArgs),
    /// Empirical rate `-eps log p` against the minimum action.
    LdpScan(RunArgs),
    /// Small-noise convergence of the controlled equation.
    WeakConvergence(RunArgs),
    /// Dyadic time-increment bound.
    TimeIncrements(RunArgs),
    /// Invariant suites (all of them unless `--suite` is given).
    Verify {
        /// jacobian, elliptic, energy, assumptions or energy-bound.
        #[arg(long)]
        suite: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeat a run from its manifest.
    Rerun {
        /// `manifest.json` or the run directory holding it.
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
    },
}

fn workers(n: Option<usize>) -> usize {
    n.filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn start(kind: StudyKind, args: RunArgs) -> Result<RunSummary, Error> {
    let src = match &args.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", p.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let src = apply_overrides(&src, &args.set)?;
    let cfg = from_toml_str(&src)?;
    let dir = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    execute(kind, &cfg, &dir, workers(args.workers), args.overwrite)
}

fn dispatch(command: Command) -> Result<RunSummary, Error> {
    let (kind, args) = match command {
        Command::Simulate(a) => (StudyKind::Simulate, a),
        Command::SimulateSde(a) => (StudyKind::SimulateSde, a),
        Command::Skeleton(a) => (StudyKind::Skeleton, a),
        Command::MinimizeAction(a) => (StudyKind::MinimizeAction, a),
        Command::Mc(a) => (StudyKind::Mc, a),
        Command::Is(a) => (StudyKind::Is, a),
        Command::LdpScan(a) => (StudyKind::LdpScan, a),
        Command::WeakConvergence(a) => (StudyKind::WeakConvergence, a),
        Command::TimeIncrements(a) => (StudyKind::TimeIncrements, a),
        Command::Verify { suite, run } => (StudyKind::parse("verify", suite.as_deref())?, run),
        Command::Rerun {
            manifest,
            out,
            overwrite,
            workers: w,
        } => return rerun_from_manifest(&manifest, out.as_deref(), workers(w), overwrite),
    };
    start(kind, args)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            if !matches!(e.kind(), ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(EXIT_INVALID);
        }
    };
    match dispatch(cli.command) {
        Ok(run) => {
            print!("{}", run.outcome.summary());
            println!("wrote {}", run.dir.display());
            if run.outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED_CHECK)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INVALID })
        }
    }
}
