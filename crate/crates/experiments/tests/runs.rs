use std::fs;
use std::path::Path;

use qg2_experiments::config::{apply_overrides, from_toml_str, RunConfig};
use qg2_experiments::run::{execute, read_manifest, rerun_from_manifest, StudyKind};
use qg2_experiments::setup::Setup;
use qg2_experiments::suites::{run_suite, Suite};
use qg2_experiments::Error;

const BASE: &str = r#"
[grid]
n = 8

[model]
f1 = 1.0
f2 = 1.0
nu = 0.05
beta = 0.5

[noise]
modes = 4

[time]
t_final = 0.2
dt = 0.01

[initial]
kind = "random"
amplitude = 1.0

[event]
observable = "l2"
threshold = 1.0

[mc]
paths = 200
eps = 0.1

[verify]
jacobian_n = 16
jacobian_pairs = 20
elliptic_n = [8, 16]
elliptic_states = 200
inversion_states = 20
energy_samples = 4
energy_steps = 50
assumption_samples = 100

[energy]
points = 4
paths = 2
max_norm = 2.0
"#;

fn config(sets: &[&str]) -> RunConfig {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    from_toml_str(&apply_overrides(BASE, &sets).unwrap()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn every_suite_passes_on_small_grids() {
    let cfg = config(&[]);
    let s = Setup::from_config(&cfg).unwrap();
    for suite in Suite::ALL {
        let r = run_suite(suite, &cfg, &s, 1).unwrap();
        assert!(r.passed(), "{}\n{:?}", r.summary(), r.notes);
        assert!(!r.rows.is_empty());
        assert!(!r.streams.is_empty());
    }
}

#[test]
fn multiplicative_noise_assumptions_hold() {
    let cfg = config(&["noise.kind=\"multiplicative\""]);
    let s = Setup::from_config(&cfg).unwrap();
    let r = run_suite(Suite::Assumptions, &cfg, &s, 1).unwrap();
    assert!(r.passed(), "{}", r.summary());
}

#[test]
fn suite_names_parse() {
    for s in Suite::ALL {
        assert_eq!(s.name().parse::<Suite>().unwrap(), s);
    }
    assert!("nope".parse::<Suite>().is_err());
}

#[test]
fn run_directory_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = config(&[]);
    let out = execute(StudyKind::Mc, &cfg, &dir, 1, false).unwrap();
    for f in ["config.toml", "manifest.json", "mc.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let m = read_manifest(&dir.join("manifest.json")).unwrap();
    assert_eq!(m.command, "mc");
    assert_eq!(m.outputs, vec!["config.toml", "mc.csv"]);
    assert_eq!(m.status, "ok");
    assert!(m.passed && out.outcome.passed());
    assert_eq!(from_toml_str(&m.config).unwrap(), cfg);
    assert_eq!(fs::read_to_string(dir.join("config.toml")).unwrap(), m.config);
    assert!(!m.seeds.is_empty());
    assert!(m.derived.is_some());
    let csv = fs::read_to_string(dir.join("mc.csv")).unwrap();
    assert!(csv.starts_with("method,eps,paths,hits,p,"));
}

#[test]
fn existing_output_needs_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = config(&[]);
    execute(StudyKind::Simulate, &cfg, &dir, 1, false).unwrap();
    let first = csv_files(&dir);
    assert!(matches!(
        execute(StudyKind::Simulate, &cfg, &dir, 1, false),
        Err(Error::OutputExists(_))
    ));
    execute(StudyKind::Simulate, &cfg, &dir, 1, true).unwrap();
    assert_eq!(first, csv_files(&dir));
    assert!(dir.join("q_final.bin").exists());
}

#[test]
fn foreign_directory_is_never_cleared() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let cfg = config(&[]);
    assert!(execute(StudyKind::Simulate, &cfg, tmp.path(), 1, true).is_err());
    assert!(tmp.path().join("keep.txt").exists());
}

#[test]
fn rerun_matches_for_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&["weak.paths=6", "weak.eps_grid=[0.1, 0.01]"]);
    for kind in [StudyKind::Mc, StudyKind::WeakConvergence, StudyKind::SimulateSde] {
        let a = tmp.path().join(format!("{kind}-a"));
        let b = tmp.path().join(format!("{kind}-b"));
        execute(kind, &cfg, &a, 1, false).unwrap();
        rerun_from_manifest(&a, Some(&b), 3, false).unwrap();
        let (ca, cb) = (csv_files(&a), csv_files(&b));
        assert!(!ca.is_empty());
        assert_eq!(ca, cb, "{kind}");
        assert_eq!(read_manifest(&b.join("manifest.json")).unwrap().workers, 3);
    }
}

#[test]
fn blow_up_reports_step_and_leaves_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = config(&["time.dt=5.0", "time.t_final=500.0", "initial.amplitude=50.0", "model.nu=1e-4"]);
    let err = execute(StudyKind::Simulate, &cfg, &dir, 1, false).unwrap_err();
    assert!(err.is_numerical(), "{err}");
    assert!(matches!(err, Error::Core(qg2_core::Error::NonFinite { step }) if step > 0));
    let m = read_manifest(&dir.join("manifest.json")).unwrap();
    assert_eq!(m.status, "error");
    assert!(m.error.unwrap().contains("step"));
}

#[test]
fn minimize_action_writes_control_and_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = config(&["action.n_t=11", "event.threshold=1.3"]);
    let out = execute(StudyKind::MinimizeAction, &cfg, &dir, 1, false).unwrap();
    assert!(out.outcome.passed(), "{}", out.outcome.summary());
    for f in ["minimizer.csv", "control.bin", "trajectory.csv", "q_final.bin"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let s = Setup::from_config(&cfg).unwrap();
    let h = qg2_core::action::read_control(
        &mut std::io::BufReader::new(fs::File::open(dir.join("control.bin")).unwrap()),
        &s.noise,
    )
    .unwrap();
    assert_eq!(h.n_t(), 11);

    let skel = tmp.path().join("skel");
    let path = dir.join("control.bin").display().to_string();
    let cfg2 = config(&[
        "skeleton.control=\"file\"",
        &format!("skeleton.control_path=\"{path}\""),
    ]);
    execute(StudyKind::Skeleton, &cfg2, &skel, 1, false).unwrap();
    let last = fs::read_to_string(skel.join("trajectory.csv")).unwrap();
    let l2: f64 = last.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(l2 >= 1.3 * (1.0 - 1e-2), "{l2}");
}

#[test]
fn unknown_subcommand_and_stray_suite_are_rejected() {
    assert!(StudyKind::parse("bogus", None).is_err());
    assert!(StudyKind::parse("mc", Some("jacobian")).is_err());
    assert_eq!(
        StudyKind::parse("verify", Some("energy-bound")).unwrap(),
        StudyKind::Verify(Some(Suite::EnergyBound))
    );
    for c in StudyKind::COMMANDS {
        assert_eq!(StudyKind::parse(c, None).unwrap().command(), c);
    }
}
