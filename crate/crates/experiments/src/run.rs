//! Subcommand dispatch, run directories and manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use qg2_core::action::{action, minimize_action, skeleton_solve, write_control, ControlPath};
use qg2_core::forcing::StreamKey;
use qg2_core::spectral::snapshot::{write_field, SnapshotKind};
use qg2_core::{Field64, Model64, Noise64};

use crate::config::{from_toml_str, RunConfig};
use crate::report::{fmt_float, Check, StreamRecord, StudyReport};
use crate::setup::{action_problem, control_for, Derived, Setup};
use crate::sim::{Drive, Simulator};
use crate::studies;
use crate::suites::{run_suite, Suite};
use crate::{Error, Result};

/// Build identifier recorded in manifests.
pub const GIT_DESCRIBE: &str = env!("QG2_GIT_DESCRIBE");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyKind {
    Simulate,
    SimulateSde,
    Skeleton,
    MinimizeAction,
    Mc,
    Is,
    LdpScan,
    WeakConvergence,
    TimeIncrements,
    /// One suite, or all of them.
    Verify(Option<Suite>),
}

impl StudyKind {
    pub const COMMANDS: [&'static str; 10] = [
        "simulate",
        "simulate-sde",
        "skeleton",
        "minimize-action",
        "mc",
        "is",
        "ldp-scan",
        "weak-convergence",
        "time-increments",
        "verify",
    ];

    pub fn parse(command: &str, suite: Option<&str>) -> Result<Self> {
        let kind = match command {
            "simulate" => StudyKind::Simulate,
            "simulate-sde" => StudyKind::SimulateSde,
            "skeleton" => StudyKind::Skeleton,
            "minimize-action" => StudyKind::MinimizeAction,
            "mc" => StudyKind::Mc,
            "is" => StudyKind::Is,
            "ldp-scan" => StudyKind::LdpScan,
            "weak-convergence" => StudyKind::WeakConvergence,
            "time-increments" => StudyKind::TimeIncrements,
            "verify" => StudyKind::Verify(suite.map(str::parse).transpose()?),
            other => return Err(Error::Invalid(format!("unknown subcommand `{other}`"))),
        };
        if suite.is_some() && !matches!(kind, StudyKind::Verify(_)) {
            return Err(Error::Invalid("--suite only applies to verify".into()));
        }
        Ok(kind)
    }

    pub fn command(&self) -> &'static str {
        match self {
            StudyKind::Simulate => "simulate",
            StudyKind::SimulateSde => "simulate-sde",
            StudyKind::Skeleton => "skeleton",
            StudyKind::MinimizeAction => "minimize-action",
            StudyKind::Mc => "mc",
            StudyKind::Is => "is",
            StudyKind::LdpScan => "ldp-scan",
            StudyKind::WeakConvergence => "weak-convergence",
            StudyKind::TimeIncrements => "time-increments",
            StudyKind::Verify(_) => "verify",
        }
    }

    pub fn suite(&self) -> Option<Suite> {
        match self {
            StudyKind::Verify(s) => *s,
            _ => None,
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.suite() {
            Some(s) => write!(f, "verify --suite {}", s.name()),
            None => f.write_str(self.command()),
        }
    }
}

/// Results of one run before they are written out.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<StudyReport>,
    /// Extra files: name and contents.
    pub files: Vec<(String, Vec<u8>)>,
    pub derived: Derived,
}

impl RunOutcome {
    pub fn checks(&self) -> impl Iterator<Item = &Check> {
        self.reports.iter().flat_map(|r| &r.checks)
    }

    pub fn passed(&self) -> bool {
        self.reports.iter().all(StudyReport::passed)
    }

    pub fn summary(&self) -> String {
        self.reports.iter().map(StudyReport::summary).collect()
    }
}

fn trajectory_csv(model: &Model64, dt: f64, states: &[Field64]) -> Result<String> {
    let mut out = String::from("t,l2_q,grad_norm_q,h2_psi\n");
    for (i, q) in states.iter().enumerate() {
        let psi = model.invert_pv(q)?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(i as f64 * dt),
            fmt_float(q.l2()),
            fmt_float(q.grad_norm()),
            fmt_float(psi.h2_norm())
        ));
    }
    Ok(out)
}

fn field_bytes(q: &Field64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_field(&mut buf, q, SnapshotKind::Q)?;
    Ok(buf)
}

fn control_bytes(noise: &Noise64, h: &ControlPath<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_control(&mut buf, noise, h)?;
    Ok(buf)
}

fn snapshots(states: &[Field64], every: usize, files: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
    if every > 0 {
        for (i, q) in states.iter().enumerate().step_by(every) {
            files.push((format!("q_{i:06}.bin"), field_bytes(q)?));
        }
    }
    files.push(("q_final.bin".into(), field_bytes(states.last().expect("non-empty"))?));
    Ok(())
}

/// A trajectory report carrying only its stream records and notes.
fn path_report(name: &str) -> StudyReport {
    StudyReport::new(name, &[])
}

/// Runs a study without touching the filesystem (except for configured input
/// snapshots).
pub fn run(kind: StudyKind, cfg: &RunConfig, workers: usize) -> Result<RunOutcome> {
    let setup = Setup::from_config(cfg)?;
    let mut reports = Vec::new();
    let mut files = Vec::new();
    match kind {
        StudyKind::Simulate => {
            let start = Instant::now();
            let traj = setup.model.integrate(&setup.initial, setup.t_final, setup.dt, setup.scheme)?;
            files.push(("trajectory.csv".into(), trajectory_csv(&setup.model, traj.dt, &traj.states)?.into_bytes()));
            snapshots(&traj.states, cfg.time.snapshot_every, &mut files)?;
            let mut r = path_report("simulate");
            r.runtime_secs = start.elapsed().as_secs_f64();
            reports.push(r);
        }
        StudyKind::SimulateSde => {
            let start = Instant::now();
            let sim = Simulator::new(&setup.model, &setup.noise, setup.t_final, setup.steps, setup.scheme)?;
            let key = StreamKey::new(cfg.seeds.base, "sde").with_trajectory(cfg.sde.trajectory);
            let mut states = Vec::with_capacity(setup.steps + 1);
            sim.run(&setup.initial, cfg.sde.eps, Drive::Free, &key, |_, q| states.push(q.clone()))?;
            files.push(("trajectory.csv".into(), trajectory_csv(&setup.model, sim.dt(), &states)?.into_bytes()));
            snapshots(&states, cfg.time.snapshot_every, &mut files)?;
            let mut r = path_report("simulate-sde");
            r.stream(cfg.seeds.base, "sde");
            r.notes.push(format!("trajectory id {}", cfg.sde.trajectory));
            r.runtime_secs = start.elapsed().as_secs_f64();
            reports.push(r);
        }
        StudyKind::Skeleton => {
            let start = Instant::now();
            let s = &cfg.skeleton;
            let (h, _) = control_for(s.control, s.amplitude, s.control_path.as_deref(), cfg, &setup)?;
            let traj = skeleton_solve(&setup.model, &setup.noise, &h, &setup.initial)?;
            files.push(("trajectory.csv".into(), trajectory_csv(&setup.model, traj.dt, &traj.states)?.into_bytes()));
            snapshots(&traj.states, cfg.time.snapshot_every, &mut files)?;
            files.push(("control.bin".into(), control_bytes(&setup.noise, &h)?));
            let mut r = path_report("skeleton");
            r.notes.push(format!("control action {:.16e}", action(&setup.noise, &h)?));
            r.runtime_secs = start.elapsed().as_secs_f64();
            reports.push(r);
        }
        StudyKind::MinimizeAction => {
            let start = Instant::now();
            let problem = action_problem(cfg, &setup)?;
            let m = minimize_action(&problem)?;
            let mut log = Vec::new();
            m.write_csv(&mut log)?;
            files.push(("minimizer.csv".into(), log));
            files.push(("control.bin".into(), control_bytes(&setup.noise, &m.control)?));
            let traj = &m.trajectory;
            files.push(("trajectory.csv".into(), trajectory_csv(&setup.model, traj.dt, &traj.states)?.into_bytes()));
            files.push(("q_final.bin".into(), field_bytes(traj.final_state())?));
            let mut r = path_report("minimize-action");
            r.notes.push(format!("minimum action {:.16e}", m.action));
            r.notes.push(format!("final penalty weight {:.16e}, evaluations {}", m.mu, m.evaluations));
            r.checks.push(Check::at_most("terminal_violation", m.violation, problem.tolerance()));
            r.runtime_secs = start.elapsed().as_secs_f64();
            reports.push(r);
        }
        StudyKind::Mc => reports.push(studies::mc_study(cfg, &setup, workers)?),
        StudyKind::Is => {
            let (r, shift) = studies::is_study(cfg, &setup, workers)?;
            files.push(("shift.bin".into(), control_bytes(&setup.noise, &shift)?));
            reports.push(r);
        }
        StudyKind::LdpScan => {
            let (r, shift) = studies::ldp_scaling_study(cfg, &setup, workers)?;
            files.push(("control.bin".into(), control_bytes(&setup.noise, &shift)?));
            reports.push(r);
        }
        StudyKind::WeakConvergence => reports.push(studies::weak_convergence_study(cfg, &setup, workers)?),
        StudyKind::TimeIncrements => reports.push(studies::time_increment_study(cfg, &setup, workers)?),
        StudyKind::Verify(suite) => {
            let list: Vec<Suite> = match suite {
                Some(s) => vec![s],
                None => Suite::ALL.to_vec(),
            };
            for s in list {
                reports.push(run_suite(s, cfg, &setup, workers)?);
            }
        }
    }
    Ok(RunOutcome {
        reports,
        files,
        derived: setup.derived,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git_describe: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    pub workers: usize,
    /// Canonical TOML echo of the configuration.
    pub config: String,
    #[serde(default)]
    pub derived: Option<serde_json::Value>,
    pub seeds: Vec<serde_json::Value>,
    pub outputs: Vec<String>,
    pub checks: Vec<serde_json::Value>,
    pub notes: Vec<String>,
    pub runtimes_secs: Vec<serde_json::Value>,
    pub wall_time_secs: f64,
    /// `ok`, `failed` (a check did not pass) or `error`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub passed: bool,
}

pub const CONFIG_ECHO: &str = "config.toml";
pub const MANIFEST: &str = "manifest.json";

/// Where a finished run was written.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub outcome: RunOutcome,
}

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied {
            let is_run = dir.join(MANIFEST).exists() || dir.join(CONFIG_ECHO).exists();
            if !overwrite {
                return Err(Error::OutputExists(dir.display().to_string()));
            }
            if !is_run {
                return Err(Error::Invalid(format!(
                    "{} is not empty and holds no previous run; refusing to overwrite it",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn to_json<S: Serialize>(v: &S) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Runs `kind` and writes the run directory: the configuration echo first,
/// then CSVs, snapshots and the manifest. A failed run still leaves a
/// manifest recording the error.
pub fn execute(kind: StudyKind, cfg: &RunConfig, dir: &Path, workers: usize, overwrite: bool) -> Result<RunSummary> {
    prepare_dir(dir, overwrite)?;
    let echo = cfg.to_toml();
    fs::write(dir.join(CONFIG_ECHO), &echo)?;
    let start = Instant::now();
    let mut manifest = Manifest {
        tool: "qg2".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_describe: GIT_DESCRIBE.into(),
        command: kind.command().into(),
        suite: kind.suite().map(|s| s.name().to_string()),
        workers,
        config: echo,
        derived: None,
        seeds: Vec::new(),
        outputs: vec![CONFIG_ECHO.into()],
        checks: Vec::new(),
        notes: Vec::new(),
        runtimes_secs: Vec::new(),
        wall_time_secs: 0.0,
        status: "error".into(),
        error: None,
        passed: false,
    };
    let outcome = match run(kind, cfg, workers) {
        Ok(o) => o,
        Err(e) => {
            manifest.wall_time_secs = start.elapsed().as_secs_f64();
            manifest.error = Some(e.to_string());
            write_manifest(dir, &manifest)?;
            return Err(e);
        }
    };
    for r in &outcome.reports {
        if !r.columns.is_empty() {
            let name = format!("{}.csv", r.name);
            fs::write(dir.join(&name), r.csv())?;
            manifest.outputs.push(name);
        }
        let seeds: Vec<&StreamRecord> = r.streams.iter().collect();
        manifest.seeds.extend(seeds.into_iter().map(to_json));
        manifest.checks.extend(r.checks.iter().map(|c| {
            let mut v = to_json(c);
            v["study"] = serde_json::Value::String(r.name.clone());
            v
        }));
        manifest.notes.extend(r.notes.iter().map(|n| format!("{}: {n}", r.name)));
        manifest
            .runtimes_secs
            .push(serde_json::json!({ "study": r.name, "seconds": r.runtime_secs }));
    }
    for (name, bytes) in &outcome.files {
        fs::write(dir.join(name), bytes)?;
        manifest.outputs.push(name.clone());
    }
    manifest.derived = Some(to_json(&outcome.derived));
    manifest.passed = outcome.passed();
    manifest.status = if manifest.passed { "ok" } else { "failed" }.into();
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    write_manifest(dir, &manifest)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        manifest,
        outcome,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

/// Repeats the run recorded in `manifest` (a file, or a run directory holding
/// one) into `dir`, defaulting to the recorded output directory.
pub fn rerun_from_manifest(manifest: &Path, dir: Option<&Path>, workers: usize, overwrite: bool) -> Result<RunSummary> {
    let path = if manifest.is_dir() {
        manifest.join(MANIFEST)
    } else {
        manifest.to_path_buf()
    };
    let m = read_manifest(&path)?;
    if m.tool != "qg2" {
        return Err(Error::Manifest(format!("{} was not written by qg2", path.display())));
    }
    let cfg = from_toml_str(&m.config)?;
    let kind = StudyKind::parse(&m.command, m.suite.as_deref())?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    execute(kind, &cfg, &dir, workers, overwrite)
}
