use statrs::distribution::{ContinuousCDF, Normal};

use qg2_core::action::ControlPath;
use qg2_core::forcing::StreamKey;
use qg2_experiments::config::{apply_overrides, from_toml_str, RunConfig};
use qg2_experiments::setup::{control_for, EventSpec, Setup};
use qg2_experiments::sim::{Drive, Simulator};
use qg2_experiments::studies::{
    is_probability, ldp_scaling_study, mc_probability, time_increment_study, weak_convergence_study, Ensemble,
};
use qg2_experiments::Error;

// Single retained mode with unit eigenvalue and decay rate a = ν·λ₁₁ = 1.
const OU: &str = r#"
[grid]
n = 2

[model]
barotropic = true
nu = 0.5
nonlinear = false

[noise]
c = 2.0
s = 1.0
modes = 1
layers = "top"

[time]
t_final = 1.0
dt = 0.02

[event]
observable = "mode"
threshold = 1.0

[action]
n_t = 51
"#;

fn config(sets: &[&str]) -> RunConfig {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    from_toml_str(&apply_overrides(OU, &sets).unwrap()).unwrap()
}

fn ens(paths: usize, stream: &str, workers: usize) -> Ensemble<'_> {
    Ensemble {
        paths,
        seed: 7,
        stream,
        workers,
    }
}

/// Terminal variance of the implicit-Euler OU recursion
/// `X_{n+1} = (X_n + √ε ΔW_n)/(1 + a dt)` from rest.
fn discrete_variance(eps: f64, a: f64, dt: f64, steps: usize) -> f64 {
    let beta = 1.0 / (1.0 + a * dt);
    eps * dt * (1..=steps).map(|k| beta.powi(2 * k as i32)).sum::<f64>()
}

#[test]
fn always_true_event_has_probability_one() {
    let cfg = config(&["event.threshold=-inf"]);
    let s = Setup::from_config(&cfg).unwrap();
    let e = mc_probability(&s, &EventSpec::from_config(&cfg).unwrap(), 0.5, ens(200, "mc", 1)).unwrap();
    assert_eq!(e.p, 1.0);
    assert!(!e.floor);
}

#[test]
fn never_true_event_reports_floor() {
    let cfg = config(&["event.observable=\"l2\"", "event.threshold=-1.0", "event.direction=\"below\""]);
    let s = Setup::from_config(&cfg).unwrap();
    let e = mc_probability(&s, &EventSpec::from_config(&cfg).unwrap(), 0.5, ens(200, "mc", 1)).unwrap();
    assert_eq!(e.p, 0.0);
    assert!(e.floor);
    assert!(e.hi > 0.0 && e.hi < 0.02);
}

#[test]
fn too_few_paths_are_rejected() {
    let cfg = config(&[]);
    let s = Setup::from_config(&cfg).unwrap();
    let ev = EventSpec::from_config(&cfg).unwrap();
    assert!(matches!(mc_probability(&s, &ev, 0.5, ens(99, "mc", 1)), Err(Error::Invalid(_))));
}

#[test]
fn crude_estimate_matches_gaussian_tail() {
    let cfg = config(&[]);
    let s = Setup::from_config(&cfg).unwrap();
    let ev = EventSpec::from_config(&cfg).unwrap();
    let eps = 0.5;
    let sd = discrete_variance(eps, 1.0, s.dt, s.steps).sqrt();
    let exact = Normal::new(0.0, sd).unwrap().sf(1.0);
    let e = mc_probability(&s, &ev, eps, ens(20_000, "mc", 0)).unwrap();
    assert!(e.lo <= exact && exact <= e.hi, "{exact} not in [{}, {}]", e.lo, e.hi);
}

#[test]
fn zero_shift_reproduces_crude_estimate() {
    let cfg = config(&[]);
    let s = Setup::from_config(&cfg).unwrap();
    let ev = EventSpec::from_config(&cfg).unwrap();
    let zero = s.zero_control();
    let crude = mc_probability(&s, &ev, 0.5, ens(500, "same", 1)).unwrap();
    let is = is_probability(&s, &ev, 0.5, &zero, ens(500, "same", 1)).unwrap();
    assert_eq!(crude.hits, is.hits);
    assert_eq!(crude.p, is.p);
    assert_eq!(is.weight_mean, Some(1.0));
}

#[test]
fn likelihood_ratio_has_unit_mean() {
    let cfg = config(&["event.threshold=-inf"]);
    let s = Setup::from_config(&cfg).unwrap();
    let ev = EventSpec::from_config(&cfg).unwrap();
    let h = ControlPath::constant(s.t_final, s.steps + 1, &[0.7, 0.0]).unwrap();
    let e = is_probability(&s, &ev, 0.3, &h, ens(20_000, "weights", 0)).unwrap();
    let (m, se) = (e.weight_mean.unwrap(), e.weight_se.unwrap());
    assert!((m - 1.0).abs() <= 4.0 * se, "mean {m}, se {se}");
    assert!((e.p - m).abs() < 1e-12);
}

#[test]
fn instanton_shift_matches_oracle_with_smaller_error() {
    let cfg = config(&["event.threshold=1.2", "action.n_t=51"]);
    let s = Setup::from_config(&cfg).unwrap();
    let ev = EventSpec::from_config(&cfg).unwrap();
    let eps = 0.3;
    let exact = Normal::new(0.0, discrete_variance(eps, 1.0, s.dt, s.steps).sqrt())
        .unwrap()
        .sf(1.2);
    let (shift, action) = control_for(cfg.mc.shift, 0.0, None, &cfg, &s).unwrap();
    assert!(action.unwrap() > 0.0);
    let is = is_probability(&s, &ev, eps, &shift, ens(4000, "is", 0)).unwrap();
    let crude = mc_probability(&s, &ev, eps, ens(4000, "mc", 0)).unwrap();
    assert!(is.lo <= exact && exact <= is.hi, "{exact} not in [{}, {}]", is.lo, is.hi);
    assert!(is.overlaps(&crude));
    assert!(is.std_err < crude.std_err);
    assert!(is.ess.unwrap() > 100.0);
}

#[test]
fn shift_outside_retained_modes_is_rejected() {
    let cfg = config(&["noise.layers=\"both\""]);
    let s = Setup::from_config(&cfg).unwrap();
    let mut h = s.zero_control();
    h.at_mut(3)[0] = 1.0;
    let cfg_top = config(&[]);
    let top = Setup::from_config(&cfg_top).unwrap();
    let mut bad = ControlPath::zeros(top.t_final, top.steps + 1, top.noise.dim()).unwrap();
    bad.at_mut(2)[top.noise.m()] = 1.0;
    let ev = EventSpec::from_config(&cfg_top).unwrap();
    assert!(is_probability(&top, &ev, 0.5, &bad, ens(100, "x", 1)).is_err());
    assert!(is_probability(&s, &ev, 0.5, &h, ens(100, "x", 1)).is_ok());
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let cfg = config(&["event.threshold=0.5"]);
    let s = Setup::from_config(&cfg).unwrap();
    let ev = EventSpec::from_config(&cfg).unwrap();
    let h = ControlPath::constant(s.t_final, s.steps + 1, &[0.4, 0.0]).unwrap();
    let a = is_probability(&s, &ev, 0.5, &h, ens(600, "w", 1)).unwrap();
    let b = is_probability(&s, &ev, 0.5, &h, ens(600, "w", 3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rate_vanishes_for_reachable_event() {
    let cfg = config(&[
        "event.threshold=-0.5",
        "ldp.paths=400",
        "ldp.estimator=\"crude\"",
        "ldp.eps_grid=[0.5, 0.1]",
    ]);
    let s = Setup::from_config(&cfg).unwrap();
    let (r, _) = ldp_scaling_study(&cfg, &s, 1).unwrap();
    let rate = column(&r, "rate");
    assert!(rate[1] < rate[0], "{rate:?}");
    assert!(rate[1].abs() < 0.01, "{rate:?}");
}

#[test]
fn zero_noise_path_equals_skeleton() {
    let cfg = config(&[]);
    let s = Setup::from_config(&cfg).unwrap();
    let (h, _) = control_for(
        qg2_experiments::config::ControlSource::Constant,
        0.5,
        None,
        &cfg,
        &s,
    )
    .unwrap();
    let sim = Simulator::new(&s.model, &s.noise, s.t_final, s.steps, s.scheme).unwrap();
    let key = StreamKey::new(1, "k");
    let a = sim.run(&s.initial, 0.0, Drive::Control(&h), &key, |_, _| {}).unwrap();
    let b = sim
        .run(&s.initial, 0.0, Drive::Control(&h), &key.with_trajectory(9), |_, _| {})
        .unwrap();
    assert_eq!(a.terminal, b.terminal);
    let sk = qg2_core::action::skeleton_solve(&s.model, &s.noise, &h, &s.initial).unwrap();
    let diff = a.terminal.sub(sk.final_state()).unwrap().l2();
    assert!(diff < 1e-14, "{diff}");
}

#[test]
fn weak_distance_scales_linearly_for_additive_noise() {
    let cfg = config(&["weak.paths=400", "weak.eps_grid=[0.1, 0.05, 0.025]"]);
    let s = Setup::from_config(&cfg).unwrap();
    let r = weak_convergence_study(&cfg, &s, 0).unwrap();
    assert!(r.passed(), "{}", r.summary());
    assert_eq!(r.rows.len(), 3);
}

fn column(r: &qg2_experiments::StudyReport, name: &str) -> Vec<f64> {
    let c = r.columns.iter().position(|x| x == name).unwrap();
    r.rows
        .iter()
        .map(|row| match row[c] {
            qg2_experiments::Value::Float(v) => v,
            qg2_experiments::Value::Int(v) => v as f64,
            _ => f64::NAN,
        })
        .collect()
}

#[test]
fn deterministic_increments_decay_quadratically() {
    let cfg = config(&[
        "initial.kind=\"mode\"",
        "increments.eps=0.0",
        "increments.paths=1",
        "increments.fine_level=10",
    ]);
    let s = Setup::from_config(&cfg).unwrap();
    let r = time_increment_study(&cfg, &s, 1).unwrap();
    assert!(r.passed(), "{}", r.summary());
    let i_n = column(&r, "i_n");
    // Levels 2..=6 keep at least 16 fine steps per cell.
    for w in i_n[..5].windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }
}

#[test]
fn unconditioned_increments_follow_the_bound() {
    let cfg = config(&["increments.paths=40", "increments.fine_level=9"]);
    let s = Setup::from_config(&cfg).unwrap();
    let r = time_increment_study(&cfg, &s, 0).unwrap();
    assert!(r.passed(), "{}", r.summary());
    assert!(column(&r, "active").iter().all(|&a| a == 40.0));
}

#[test]
fn tiny_threshold_is_flagged() {
    let cfg = config(&[
        "initial.kind=\"mode\"",
        "increments.threshold=1e-6",
        "increments.paths=4",
        "increments.fine_level=8",
        "increments.max_level=6",
    ]);
    let s = Setup::from_config(&cfg).unwrap();
    let r = time_increment_study(&cfg, &s, 1).unwrap();
    assert!(!r.passed());
    assert!(r.notes.iter().any(|n| n.contains("threshold")));
}
