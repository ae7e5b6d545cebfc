//! Acceptance criteria. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use qg2_core::action::{skeleton_solve, ActionProblem, ControlPath, Target};
use qg2_core::forcing::{random_field, sample_normals, StreamKey};
use qg2_experiments::config::{apply_overrides, from_toml_str, ControlSource, RunConfig};
use qg2_experiments::run::{execute, rerun_from_manifest, StudyKind};
use qg2_experiments::setup::{control_for, EventSpec, Setup};
use qg2_experiments::studies::{
    energy_bound_study, is_probability, ldp_scaling_study, mc_probability, time_increment_study,
    weak_convergence_study, Ensemble,
};
use qg2_experiments::suites::{run_suite, Suite};
use qg2_experiments::{StudyReport, Value};

type Outcome = Result<(bool, String), String>;

/// Single retained mode `(1,1)` of the top layer: `λ = 2`, `ν = 0.5`, so the
/// decay rate is `a = 1`, with unit noise eigenvalue. The observable is the
/// orthonormal mode amplitude.
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
dt = 0.01

[event]
observable = "mode"
threshold = 1.0

[action]
n_t = 101
"#;

/// Nonlinear two-layer configuration used by the stochastic studies.
const TWO_LAYER: &str = r#"
[grid]
n = 16

[model]
f1 = 1.0
f2 = 1.0
beta = 0.5
nu = 0.05
r = 0.05

[noise]
kind = "additive"

[time]
t_final = 1.0
dt = 0.01

[initial]
kind = "random"
amplitude = 1.0
seed = 3
"#;

const OU_RATE: f64 = 1.0;
const T: f64 = 1.0;

fn config(base: &str, sets: &[&str]) -> Result<RunConfig, String> {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    let src = apply_overrides(base, &sets).map_err(|e| e.to_string())?;
    from_toml_str(&src).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn check(r: &StudyReport, name: &str) -> Result<(bool, f64), String> {
    r.checks
        .iter()
        .find(|c| c.name == name)
        .map(|c| (c.passed, c.value))
        .ok_or_else(|| format!("study {} has no check {name}", r.name))
}

fn column(r: &StudyReport, name: &str) -> Vec<f64> {
    let c = r.columns.iter().position(|x| x == name).expect("column");
    r.rows
        .iter()
        .map(|row| match row[c] {
            Value::Float(v) => v,
            Value::Int(v) => v as f64,
            _ => f64::NAN,
        })
        .collect()
}

fn ou_closed_form(b: f64) -> f64 {
    OU_RATE * b * b / (1.0 - (-2.0 * OU_RATE * T).exp())
}

fn jacobian() -> Outcome {
    let cfg = config(TWO_LAYER, &[])?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let r = run_suite(Suite::Jacobian, &cfg, &s, 0).map_err(err)?;
    let (a, av) = check(&r, "antisymmetry")?;
    let (u, uv) = check(&r, "orthogonality_u")?;
    let (v, vv) = check(&r, "orthogonality_v")?;
    Ok((
        a && u && v,
        format!(
            "N = {}, {} pairs: antisymmetry {av:.2e}, (J(u,v),u) {uv:.2e}, (J(u,v),v) {vv:.2e} (tol 1e-8)",
            cfg.verify.jacobian_n, cfg.verify.jacobian_pairs
        ),
    ))
}

fn elliptic() -> Result<StudyReport, String> {
    let cfg = config(TWO_LAYER, &[])?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    run_suite(Suite::Elliptic, &cfg, &s, 0).map_err(err)
}

fn inversion(r: &StudyReport) -> Outcome {
    let (a, res) = check(r, "inversion_residual")?;
    let (b, hand) = check(r, "hand_case_error")?;
    Ok((
        a && b,
        format!("max relative residual {res:.2e} (tol 1e-12), hand case error {hand:.2e}"),
    ))
}

fn elliptic_bound(r: &StudyReport) -> Outcome {
    let (f, _) = check(r, "elliptic_ratio_finite")?;
    let (c, change) = check(r, "elliptic_ratio_change")?;
    let v = column(r, "value");
    Ok((
        f && c,
        format!("sup ratio {:.6} (N=32), {:.6} (N=64), change {:.2}% (< 5%)", v[2], v[3], 100.0 * change),
    ))
}

fn energy_bound() -> Outcome {
    let cfg = config(
        TWO_LAYER,
        &["grid.n=32", "energy.eps=0.1", "energy.points=10", "energy.paths=8"],
    )?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let r = energy_bound_study(&cfg, &s, 0).map_err(err)?;
    let (ok, r2) = check(&r, "r2")?;
    Ok((ok, format!("10-point ladder, N = 32: affine R² = {r2:.6} (>= 0.95)")))
}

fn adjoint_gradient() -> Outcome {
    let cfg = config(
        TWO_LAYER,
        &[
            "action.target=\"ball\"",
            "action.ball_radius=0.1",
            "action.n_t=64",
            "action.mu=5.0",
            "noise.kind=\"multiplicative\"",
        ],
    )?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let mut rng = StreamKey::new(11, "acceptance-gradient").rng_at(0);
    let center = random_field(s.grid(), 3.0, &mut rng);
    let problem = ActionProblem::new(
        &s.model,
        &s.noise,
        s.initial.clone(),
        s.t_final,
        64,
        Target::Ball { center, radius: 0.1 },
    )
    .and_then(|p| p.with_mu(5.0))
    .map_err(err)?;
    let random_path = |scale: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let dim = s.noise.dim();
        let c: Vec<f64> = sample_normals::<f64, _>(64 * dim, rng).into_iter().map(|v| v * scale).collect();
        let mut h = ControlPath::from_coeffs(s.t_final, 64, dim, c).expect("shape");
        for n in 0..64 {
            s.noise.mask(h.at_mut(n));
        }
        h
    };
    let h = random_path(0.5, &mut rng);
    let (_, grad) = problem.gradient(&h).map_err(err)?;
    let mut worst = 0.0f64;
    let directions = 10;
    for _ in 0..directions {
        let d = random_path(1.0, &mut rng);
        let dn = d.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt();
        let hn = h.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = 1e-5 * hn.max(1.0) / dn;
        let at = |sgn: f64| {
            let c = h.coeffs().iter().zip(d.coeffs()).map(|(a, b)| a + sgn * delta * b).collect();
            ControlPath::from_coeffs(s.t_final, 64, h.dim(), c).expect("shape")
        };
        let fd = (problem.objective(&at(1.0)).map_err(err)? - problem.objective(&at(-1.0)).map_err(err)?)
            / (2.0 * delta);
        let ad: f64 = grad.coeffs().iter().zip(d.coeffs()).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - ad).abs() / ad.abs());
    }
    Ok((
        worst <= 1e-5,
        format!("N = 16, n_t = 64, {directions} directions: max relative error {worst:.2e} (<= 1e-5)"),
    ))
}

/// Minimum of the discretized OU problem by a dense KKT solve. The terminal
/// amplitude is linear in the control; its coefficients come from skeleton
/// solves with unit impulses at each node.
fn ou_dense_qp(b: f64, n_t: usize) -> Result<f64, String> {
    let cfg = config(OU, &[])?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let ev = EventSpec::from_config(&cfg).map_err(err)?;
    let dim = s.noise.dim();
    let dt = T / (n_t - 1) as f64;
    let mut c = DVector::<f64>::zeros(n_t);
    for i in 0..n_t {
        let mut h = ControlPath::zeros(T, n_t, dim).map_err(err)?;
        h.at_mut(i)[0] = 1.0;
        let traj = skeleton_solve(&s.model, &s.noise, &h, &s.initial).map_err(err)?;
        c[i] = ev.observable.evaluate(traj.final_state(), 0.0);
    }
    let w = |i: usize| if i == 0 || i == n_t - 1 { 0.5 * dt } else { dt };
    let mut kkt = DMatrix::<f64>::zeros(n_t + 1, n_t + 1);
    for i in 0..n_t {
        kkt[(i, i)] = w(i);
        kkt[(i, n_t)] = c[i];
        kkt[(n_t, i)] = c[i];
    }
    let mut rhs = DVector::<f64>::zeros(n_t + 1);
    rhs[n_t] = b;
    let sol = kkt.lu().solve(&rhs).ok_or("singular KKT system")?;
    Ok(0.5 * (0..n_t).map(|i| w(i) * sol[i] * sol[i]).sum::<f64>())
}

fn ou_instanton() -> Outcome {
    let b = 1.0;
    let closed = ou_closed_form(b);
    let qp = ou_dense_qp(b, 801)?;
    let validated = (qp - closed).abs() <= 2e-3 * closed;
    let cfg = config(OU, &[])?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let (_, i_star) = control_for(ControlSource::Instanton, 0.0, None, &cfg, &s).map_err(err)?;
    let i_star = i_star.ok_or("no action")?;
    let rel = (i_star - closed).abs() / closed;
    Ok((
        validated && rel <= 0.02,
        format!(
            "closed form {closed:.6} (dense QP {qp:.6}, n_t = 801), optimizer I* = {i_star:.6} at n_t = 101: relative error {:.3}% (<= 2%)",
            100.0 * rel
        ),
    ))
}

/// Threshold with closed-form action 2.
fn ldp_threshold() -> f64 {
    (2.0 * (1.0 - (-2.0 * OU_RATE * T).exp()) / OU_RATE).sqrt()
}

fn ldp_scaling() -> Outcome {
    let b = format!("event.threshold={}", ldp_threshold());
    let cfg = config(
        OU,
        &[
            &b,
            "ldp.eps_grid=[0.5, 0.3, 0.2]",
            "ldp.paths=100000",
            "ldp.estimator=\"importance\"",
            "ldp.tolerance=0.3",
        ],
    )?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let (r, _) = ldp_scaling_study(&cfg, &s, 0).map_err(err)?;
    let gaps = column(&r, "gap");
    let i_star = column(&r, "i_star")[0];
    Ok((
        r.passed(),
        format!(
            "I* = {i_star:.4}, 1e5 IS paths: gap {:.3} / {:.3} / {:.3} at eps 0.5 / 0.3 / 0.2 (monotone, last <= 0.3)",
            gaps[0], gaps[1], gaps[2]
        ),
    ))
}

fn weak_convergence() -> Outcome {
    let cfg = config(
        TWO_LAYER,
        &[
            "weak.eps_grid=[1e-1, 1e-2, 1e-3]",
            "weak.paths=200",
            "weak.control=\"constant\"",
            "weak.amplitude=0.5",
        ],
    )?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let r = weak_convergence_study(&cfg, &s, 0).map_err(err)?;
    let (ok, slope) = check(&r, "loglog_slope")?;
    Ok((ok, format!("200 coupled paths, log-log slope {slope:.4} (in [0.8, 1.2])")))
}

fn time_increments() -> Outcome {
    let cfg = config(
        TWO_LAYER,
        &[
            "increments.eps=0.1",
            "increments.min_level=2",
            "increments.max_level=8",
            "increments.fine_level=10",
            "increments.paths=50",
            "increments.threshold=4.0",
        ],
    )?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let r = time_increment_study(&cfg, &s, 0).map_err(err)?;
    let (_, worst) = check(&r, "max_ratio_to_bound")?;
    let (_, active) = check(&r, "active_fraction")?;
    Ok((
        r.passed(),
        format!("levels 3..8, N = 4 (active fraction {active:.2}): max I_n / (C 2^(-n/2)) = {worst:.4} (<= 1)"),
    ))
}

fn importance_sampling() -> Outcome {
    let cfg = config(OU, &[])?;
    let s = Setup::from_config(&cfg).map_err(err)?;
    let ev = EventSpec::from_config(&cfg).map_err(err)?;
    let (shift, _) = control_for(ControlSource::Instanton, 0.0, None, &cfg, &s).map_err(err)?;
    let paths = 10_000;
    let eps = 0.5;
    let ens = |stream| Ensemble {
        paths,
        seed: 2024,
        stream,
        workers: 0,
    };
    let crude = mc_probability(&s, &ev, eps, ens("accept-mc")).map_err(err)?;
    let is = is_probability(&s, &ev, eps, &shift, ens("accept-is")).map_err(err)?;
    let ok = is.overlaps(&crude) && is.std_err < crude.std_err && !crude.floor;
    Ok((
        ok,
        format!(
            "eps = {eps}, {paths} paths each: crude {:.4e} [{:.4e}, {:.4e}], IS {:.4e} [{:.4e}, {:.4e}], std err ratio {:.3}",
            crude.p,
            crude.lo,
            crude.hi,
            is.p,
            is.lo,
            is.hi,
            is.std_err / crude.std_err
        ),
    ))
}

fn csv_bodies(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap_or_default()))
        .collect();
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cases: Vec<(StudyKind, RunConfig)> = vec![
        (StudyKind::Mc, config(OU, &["mc.paths=2000"])?),
        (StudyKind::Is, config(OU, &["mc.paths=2000", "event.threshold=1.5"])?),
        (
            StudyKind::WeakConvergence,
            config(TWO_LAYER, &["grid.n=8", "weak.paths=8", "weak.eps_grid=[0.1, 0.01]"])?,
        ),
        (
            StudyKind::TimeIncrements,
            config(TWO_LAYER, &["grid.n=8", "increments.paths=6", "increments.fine_level=8", "increments.max_level=6"])?,
        ),
    ];
    let mut names = Vec::new();
    for (kind, cfg) in cases {
        let a = tmp.path().join(format!("{}-w1", kind.command()));
        let b = tmp.path().join(format!("{}-w4", kind.command()));
        execute(kind, &cfg, &a, 1, false).map_err(err)?;
        rerun_from_manifest(&a.join("manifest.json"), Some(&b), 4, false).map_err(err)?;
        let (ca, cb) = (csv_bodies(&a), csv_bodies(&b));
        if ca.is_empty() || ca != cb {
            return Ok((false, format!("{kind}: CSV bodies differ between 1 and 4 workers")));
        }
        names.push(kind.command());
    }
    Ok((
        true,
        format!("{}: reruns from manifest with 4 workers match 1-worker CSVs byte for byte", names.join(", ")),
    ))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut all = true;
    let elliptic_report = elliptic();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("jacobian identities", Box::new(jacobian)),
        (
            "PV inversion",
            Box::new(|| elliptic_report.as_ref().map_err(Clone::clone).and_then(inversion)),
        ),
        (
            "elliptic bound",
            Box::new(|| elliptic_report.as_ref().map_err(Clone::clone).and_then(elliptic_bound)),
        ),
        ("energy bound shape", Box::new(energy_bound)),
        ("adjoint gradient", Box::new(adjoint_gradient)),
        ("minimum action vs OU", Box::new(ou_instanton)),
        ("LDP scaling", Box::new(ldp_scaling)),
        ("weak convergence", Box::new(weak_convergence)),
        ("time increments", Box::new(time_increments)),
        ("importance sampling", Box::new(importance_sampling)),
        ("reproducibility", Box::new(reproducibility)),
    ];
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        all &= ok;
        println!(
            "{} {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {:.1}s total", started.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
