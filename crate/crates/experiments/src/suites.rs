//! Invariant suites for the verify subcommand.
//!
//! Each suite records one row per random sample with its stream and
//! trajectory id, so a failing sample can be replayed alone.

use std::time::Instant;

use qg2_core::forcing::{random_field, validate_assumptions, StreamKey};
use qg2_core::model::{ModelParams, QgModel, Scheme};
use qg2_core::spectral::{Dealias, GridSpec, LayeredField, Spectral};
use qg2_core::Field64;

use crate::config::RunConfig;
use crate::report::{Check, StudyReport};
use crate::setup::Setup;
use crate::studies::energy_bound_study;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Jacobian,
    Elliptic,
    Energy,
    Assumptions,
    EnergyBound,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Jacobian,
        Suite::Elliptic,
        Suite::Energy,
        Suite::Assumptions,
        Suite::EnergyBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Jacobian => "jacobian",
            Suite::Elliptic => "elliptic",
            Suite::Energy => "energy",
            Suite::Assumptions => "assumptions",
            Suite::EnergyBound => "energy-bound",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown suite `{s}`")))
    }
}

pub fn run_suite(suite: Suite, cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<StudyReport> {
    let start = Instant::now();
    let mut r = match suite {
        Suite::Jacobian => jacobian(cfg)?,
        Suite::Elliptic => elliptic(cfg, setup)?,
        Suite::Energy => energy(cfg, setup)?,
        Suite::Assumptions => assumptions(cfg, setup)?,
        Suite::EnergyBound => energy_bound_study(cfg, setup, workers)?,
    };
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::stats::pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn fail_notes(r: &mut StudyReport, stream: &str, seed: u64, failed: &[usize]) {
    if !failed.is_empty() {
        let ids: Vec<String> = failed.iter().map(|i| i.to_string()).collect();
        r.notes.push(format!(
            "failed samples (seed {seed}, stream {stream}, trajectory ids): {}",
            ids.join(" ")
        ));
    }
}

/// Antisymmetry `J(u,v) = −J(v,u)` and orthogonality `(J(u,v),u) =
/// (J(u,v),v) = 0` on random single-layer pairs.
fn jacobian(cfg: &RunConfig) -> Result<StudyReport> {
    let v = &cfg.verify;
    let dealias: Dealias = cfg.grid.dealias.parse()?;
    let grid = GridSpec::new(v.jacobian_n, cfg.grid.length, dealias)?;
    let sp = Spectral::new(grid);
    let seed = cfg.seeds.base;
    let key = StreamKey::new(seed, "verify-jacobian");
    let mut r = StudyReport::new(
        "jacobian",
        &["sample", "antisymmetry", "orth_u", "orth_v", "seed", "stream"],
    );
    r.stream(seed, "verify-jacobian");
    let mut worst = [0.0f64; 3];
    let mut failed = Vec::new();
    for i in 0..v.jacobian_pairs {
        let mut rng = key.with_trajectory(i as u64).rng_at(0);
        let u = random_field(&grid, 1.0, &mut rng).layer(0).to_vec();
        let w = random_field(&grid, 1.0, &mut rng).layer(0).to_vec();
        let juv = sp.jacobian(&u, &w)?;
        let jvu = sp.jacobian(&w, &u)?;
        let sum: Vec<f64> = juv.iter().zip(&jvu).map(|(a, b)| a + b).collect();
        let scale = norm(&juv);
        let anti = norm(&sum) / scale;
        let ou = dot(&juv, &u).abs() / (scale * norm(&u));
        let ov = dot(&juv, &w).abs() / (scale * norm(&w));
        for (m, x) in worst.iter_mut().zip([anti, ou, ov]) {
            *m = m.max(x);
        }
        if anti.max(ou).max(ov) > v.jacobian_tol {
            failed.push(i);
        }
        r.push_row(vec![i.into(), anti.into(), ou.into(), ov.into(), seed.into(), "verify-jacobian".into()]);
    }
    r.checks.push(Check::at_most("antisymmetry", worst[0], v.jacobian_tol));
    r.checks.push(Check::at_most("orthogonality_u", worst[1], v.jacobian_tol));
    r.checks.push(Check::at_most("orthogonality_v", worst[2], v.jacobian_tol));
    fail_notes(&mut r, "verify-jacobian", seed, &failed);
    Ok(r)
}

fn model_at(setup: &Setup, n: usize) -> Result<QgModel<f64>> {
    let g = setup.grid();
    let grid = GridSpec::new(n, g.length(), g.dealias())?;
    let params = ModelParams {
        forcing: None,
        ..setup.model.params().clone()
    };
    Ok(QgModel::from_grid(grid, params)?)
}

/// Sup over random states of `‖ψ‖²_{H²} / ‖q‖²`.
fn elliptic_ratio(model: &QgModel<f64>, states: usize, key: &StreamKey) -> Result<f64> {
    let mut sup = 0.0f64;
    for i in 0..states {
        let q = random_field(model.grid(), 1.0, &mut key.with_trajectory(i as u64).rng_at(0));
        let psi = model.invert_pv(&q)?;
        sup = sup.max(psi.h2_sq() / q.l2_sq());
    }
    Ok(sup)
}

/// PV inversion residual, the hand-solved two-by-two case and stability of
/// the elliptic ratio under grid doubling.
fn elliptic(cfg: &RunConfig, setup: &Setup) -> Result<StudyReport> {
    let v = &cfg.verify;
    let seed = cfg.seeds.base;
    let mut r = StudyReport::new("elliptic", &["quantity", "n", "samples", "value", "seed", "stream"]);

    let inv_key = StreamKey::new(seed, "verify-inversion");
    r.stream(seed, "verify-inversion");
    let mut residual = 0.0f64;
    let mut failed = Vec::new();
    for i in 0..v.inversion_states {
        let q = random_field(setup.grid(), 1.0, &mut inv_key.with_trajectory(i as u64).rng_at(0));
        let back = setup.model.pv_from_psi(&setup.model.invert_pv(&q)?)?;
        let rel = back.sub(&q)?.l2() / q.l2();
        if rel > v.inversion_tol {
            failed.push(i);
        }
        residual = residual.max(rel);
    }
    r.push_row(vec![
        "inversion_residual".into(),
        setup.grid().n().into(),
        v.inversion_states.into(),
        residual.into(),
        seed.into(),
        "verify-inversion".into(),
    ]);
    r.checks.push(Check::at_most("inversion_residual", residual, v.inversion_tol));
    fail_notes(&mut r, "verify-inversion", seed, &failed);

    // λ = 2, F1 = F2 = 1, q = (1, 0) on mode (1, 1): ψ = (−3/8, −1/8).
    let grid = GridSpec::new(2, std::f64::consts::PI, Dealias::new(3, 2)?)?;
    let hand = QgModel::from_grid(grid, ModelParams::new(1.0, 1.0, 0.0, 1.0, 0.0))?;
    let mut q = LayeredField::zeros(grid);
    q.layer_mut(0)[grid.index(1, 1)] = 1.0;
    let psi = hand.invert_pv(&q)?;
    let err = (psi.layer(0)[0] + 0.375).abs().max((psi.layer(1)[0] + 0.125).abs());
    r.push_row(vec!["hand_case_error".into(), 2usize.into(), 1usize.into(), err.into(), 0u64.into(), "".into()]);
    r.checks.push(Check::at_most("hand_case_error", err, 4.0 * f64::EPSILON));

    let key = StreamKey::new(seed, "verify-elliptic");
    r.stream(seed, "verify-elliptic");
    let [n1, n2] = v.elliptic_n;
    let c1 = elliptic_ratio(&model_at(setup, n1)?, v.elliptic_states, &key)?;
    let c2 = elliptic_ratio(&model_at(setup, n2)?, v.elliptic_states, &key)?;
    for (n, c) in [(n1, c1), (n2, c2)] {
        r.push_row(vec![
            "elliptic_ratio_sup".into(),
            n.into(),
            v.elliptic_states.into(),
            c.into(),
            seed.into(),
            "verify-elliptic".into(),
        ]);
    }
    let change = (c2 - c1).abs() / c1;
    r.checks.push(Check::new(
        "elliptic_ratio_finite",
        c1.max(c2),
        "finite",
        c1.is_finite() && c2.is_finite(),
    ));
    r.checks.push(Check::new(
        "elliptic_ratio_change",
        change,
        format!("< {:e}", v.elliptic_tol),
        change < v.elliptic_tol,
    ));
    Ok(r)
}

/// Relative slack for roundoff in the step-to-step decay test.
const DECAY_SLACK: f64 = 1e-13;

/// Unforced, `β = 0`, decoupled layers: `‖q‖²` never increases.
fn energy(cfg: &RunConfig, setup: &Setup) -> Result<StudyReport> {
    let v = &cfg.verify;
    let p = setup.model.params();
    let grid = *setup.grid();
    let model = QgModel::from_grid(grid, ModelParams::barotropic(0.0, p.nu, p.r))?;
    let lambda_min = grid.lambda(1, 1);
    let seed = cfg.seeds.base;
    let key = StreamKey::new(seed, "verify-energy");
    let mut r = StudyReport::new(
        "energy_decay",
        &["sample", "dt", "steps", "initial_l2_sq", "final_l2_sq", "max_step_ratio", "seed", "stream"],
    );
    r.stream(seed, "verify-energy");
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for i in 0..v.energy_samples {
        let q0: Field64 = random_field(&grid, 1.0, &mut key.with_trajectory(i as u64).rng_at(0));
        // Forward Euler on the skew advection adds dt²‖E‖²; keep it below
        // the implicit viscous loss of the slowest mode.
        let e = model.explicit_tendency(&q0)?.l2_sq();
        let mut dt = p.nu * lambda_min * q0.l2_sq() / e.max(f64::MIN_POSITIVE);
        if let Some(cfl) = model.suggest_dt(&q0)? {
            dt = dt.min(cfl);
        }
        dt = dt.min(setup.t_final / v.energy_steps as f64);
        let stepper = model.stepper(dt, Scheme::Imex1)?;
        let mut q = q0.clone();
        let mut ratio = 0.0f64;
        for _ in 0..v.energy_steps {
            let next = stepper.step(&q)?;
            ratio = ratio.max(next.l2_sq() / q.l2_sq());
            q = next;
        }
        if ratio > 1.0 + DECAY_SLACK {
            failed.push(i);
        }
        worst = worst.max(ratio);
        r.push_row(vec![
            i.into(),
            dt.into(),
            v.energy_steps.into(),
            q0.l2_sq().into(),
            q.l2_sq().into(),
            ratio.into(),
            seed.into(),
            "verify-energy".into(),
        ]);
    }
    r.checks.push(Check::at_most("max_step_ratio", worst, 1.0 + DECAY_SLACK));
    fail_notes(&mut r, "verify-energy", seed, &failed);
    Ok(r)
}

/// Growth and Lipschitz constants of the noise and control intensities.
fn assumptions(cfg: &RunConfig, setup: &Setup) -> Result<StudyReport> {
    let seed = cfg.seeds.base;
    let key = StreamKey::new(seed, "verify-assumptions");
    let mut r = StudyReport::new(
        "assumptions",
        &["operator", "samples", "trace", "growth", "lipschitz", "growth_h1", "seed", "stream"],
    );
    r.stream(seed, "verify-assumptions");
    let noise = &setup.noise;
    let mut kinds = vec![("sigma", noise.kind())];
    if noise.tilde_kind() != noise.kind() {
        kinds.push(("sigma_tilde", noise.tilde_kind()));
    }
    for (name, kind) in kinds {
        let a = validate_assumptions(setup.model.spectral(), noise, kind, cfg.verify.assumption_samples, &key)?;
        r.push_row(vec![
            name.into(),
            a.samples.into(),
            a.trace.into(),
            a.growth.into(),
            a.lipschitz.into(),
            a.growth_h1.into(),
            seed.into(),
            "verify-assumptions".into(),
        ]);
        r.checks.push(Check::new(
            format!("{name}_growth"),
            a.growth,
            "finite and not growing across magnitude tiers",
            a.growth.is_finite() && !a.growth_flag,
        ));
        r.checks.push(Check::new(
            format!("{name}_lipschitz"),
            a.lipschitz,
            "finite and not growing across magnitude tiers",
            a.lipschitz.is_finite() && !a.lipschitz_flag,
        ));
    }
    Ok(r)
}
