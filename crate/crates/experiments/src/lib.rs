//! Monte Carlo and importance-sampling estimators, convergence studies,
//! invariant suites and the run-directory layer behind the `qg2` binary.
//!
//! Path ensembles are keyed by trajectory id and reduced in index order, so
//! every CSV a study writes is identical for any worker count.

// `!(x <= tol)` is used on purpose: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod error;
pub mod report;
pub mod run;
pub mod setup;
pub mod sim;
pub mod stats;
pub mod studies;
pub mod suites;

pub use config::{apply_overrides, from_toml_str, ConfigError, RunConfig};
pub use error::{Error, Result};
pub use report::{Check, StudyReport, Value};
pub use run::{execute, rerun_from_manifest, run, Manifest, RunOutcome, RunSummary, StudyKind};
pub use setup::{EventSpec, Setup};
pub use stats::Estimate;
pub use suites::Suite;
