//! Probability estimators and the convergence studies.

use std::time::Instant;

use qg2_core::action::ControlPath;
use qg2_core::forcing::{random_field, SigmaKind, StreamKey};
use qg2_core::spectral::XNormAccumulator;
use qg2_core::Field64;

use crate::config::{ControlSource, EstimatorName, RunConfig, TargetKind};
use crate::report::{Check, StudyReport, Value};
use crate::setup::{control_for, resample, EventSpec, Setup};
use crate::sim::{ensemble, Drive, Simulator};
use crate::stats::{self, fit_line, Estimate};
use crate::{Error, Result};

/// Smallest ensemble accepted by the probability estimators.
pub const MIN_PATHS: usize = 100;

/// Ensemble settings shared by the estimators.
#[derive(Clone, Copy, Debug)]
pub struct Ensemble<'a> {
    pub paths: usize,
    pub seed: u64,
    pub stream: &'a str,
    pub workers: usize,
}

fn check_paths(paths: usize) -> Result<()> {
    if paths < MIN_PATHS {
        return Err(Error::Invalid(format!("need at least {MIN_PATHS} paths, got {paths}")));
    }
    Ok(())
}

/// Crude Monte Carlo estimate of `P(Φ(q^ε) ∈ event)` with a Wilson interval.
pub fn mc_probability(setup: &Setup, event: &EventSpec, eps: f64, ens: Ensemble<'_>) -> Result<Estimate> {
    check_paths(ens.paths)?;
    let sim = Simulator::new(&setup.model, &setup.noise, setup.t_final, setup.steps, setup.scheme)?;
    let key = StreamKey::new(ens.seed, ens.stream);
    let hits = ensemble(ens.workers, ens.paths, |i| {
        let s = sim.run(&setup.initial, eps, Drive::Free, &key.with_trajectory(i as u64), |_, _| {})?;
        Ok(event.holds(event.observable.evaluate(&s.terminal, s.running_max_l2)))
    })?;
    Ok(Estimate::crude(hits.iter().filter(|&&h| h).count(), ens.paths))
}

/// Importance-sampling estimate under the drift-shifted noise
/// `dW → dW + ε^{-1/2} h dt`, reweighted path by path in log space.
pub fn is_probability(
    setup: &Setup,
    event: &EventSpec,
    eps: f64,
    shift: &ControlPath<f64>,
    ens: Ensemble<'_>,
) -> Result<Estimate> {
    check_paths(ens.paths)?;
    for n in 0..shift.n_t() {
        setup.noise.h0_norm_sq(shift.at(n))?;
    }
    let shift = resample(shift, setup.steps + 1)?;
    let sim = Simulator::new(&setup.model, &setup.noise, setup.t_final, setup.steps, setup.scheme)?;
    let key = StreamKey::new(ens.seed, ens.stream);
    let out = ensemble(ens.workers, ens.paths, |i| {
        let s = sim.run(&setup.initial, eps, Drive::Shift(&shift), &key.with_trajectory(i as u64), |_, _| {})?;
        let hit = event.holds(event.observable.evaluate(&s.terminal, s.running_max_l2));
        Ok((s.log_weight, hit))
    })?;
    let (lw, hit): (Vec<f64>, Vec<bool>) = out.into_iter().unzip();
    Ok(Estimate::importance(&lw, &hit))
}

pub const PROBABILITY_COLUMNS: [&str; 15] = [
    "method",
    "eps",
    "paths",
    "hits",
    "p",
    "ci_lo",
    "ci_hi",
    "std_err",
    "log_p",
    "floor",
    "ess",
    "weight_mean",
    "weight_se",
    "seed",
    "stream",
];

fn probability_row(e: &Estimate, eps: f64, seed: u64, stream: &str) -> Vec<Value> {
    let opt = |v: Option<f64>| Value::Float(v.unwrap_or(f64::NAN));
    vec![
        Value::from(match e.method {
            stats::Method::Crude => "crude",
            stats::Method::Importance => "importance",
        }),
        eps.into(),
        e.paths.into(),
        e.hits.into(),
        e.p.into(),
        e.lo.into(),
        e.hi.into(),
        e.std_err.into(),
        e.log_p.into(),
        e.floor.into(),
        opt(e.ess),
        opt(e.weight_mean),
        opt(e.weight_se),
        seed.into(),
        stream.into(),
    ]
}

/// `mc` subcommand: one crude estimate at `mc.eps`.
pub fn mc_study(cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<StudyReport> {
    let start = Instant::now();
    let event = EventSpec::from_config(cfg)?;
    let ens = Ensemble {
        paths: cfg.mc.paths,
        seed: cfg.seeds.base,
        stream: "mc",
        workers,
    };
    let e = mc_probability(setup, &event, cfg.mc.eps, ens)?;
    let mut r = StudyReport::new("mc", &PROBABILITY_COLUMNS);
    r.push_row(probability_row(&e, cfg.mc.eps, ens.seed, ens.stream));
    r.stream(ens.seed, ens.stream);
    if e.floor {
        r.notes.push("no hits: resolution floor, upper bound is one-sided".into());
    }
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

/// `is` subcommand: importance-sampling estimate with the `mc.shift` control.
/// Returns the report and the action of the shift when it is an instanton.
pub fn is_study(cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<(StudyReport, ControlPath<f64>)> {
    let start = Instant::now();
    let event = EventSpec::from_config(cfg)?;
    let (shift, action) = control_for(cfg.mc.shift, 0.0, cfg.mc.control_path.as_deref(), cfg, setup)?;
    let ens = Ensemble {
        paths: cfg.mc.paths,
        seed: cfg.seeds.base,
        stream: "is",
        workers,
    };
    let e = is_probability(setup, &event, cfg.mc.eps, &shift, ens)?;
    let mut r = StudyReport::new("is", &PROBABILITY_COLUMNS);
    r.push_row(probability_row(&e, cfg.mc.eps, ens.seed, ens.stream));
    r.stream(ens.seed, ens.stream);
    if let Some(a) = action {
        r.notes.push(format!("shift action {a:.16e}"));
    }
    if e.floor {
        r.notes.push("no weighted hits: the shift does not reach the event".into());
    }
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok((r, shift))
}

/// Relative distance of the empirical rate `−ε log p̂` to `I*`; the absolute
/// distance when `I* = 0`.
pub fn rate_gap(rate: f64, i_star: f64) -> f64 {
    if i_star > 0.0 {
        (rate - i_star).abs() / i_star
    } else {
        rate.abs()
    }
}

/// `−ε log p̂` over a decreasing `eps` grid against the certified minimum action.
pub fn ldp_scaling_study(cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<(StudyReport, ControlPath<f64>)> {
    let start = Instant::now();
    if cfg.action.target != TargetKind::Event {
        return Err(Error::Invalid("ldp-scan needs action.target = \"event\"".into()));
    }
    let event = EventSpec::from_config(cfg)?;
    let (shift, i_star) = control_for(ControlSource::Instanton, 0.0, None, cfg, setup)?;
    let i_star = i_star.expect("instanton carries its action");
    let mut r = StudyReport::new(
        "ldp",
        &[
            "eps", "paths", "hits", "p", "ci_lo", "ci_hi", "log_p", "rate", "i_star", "gap", "floor", "ess", "seed",
            "stream",
        ],
    );
    let mut gaps = Vec::new();
    let mut floors = false;
    for (idx, &eps) in cfg.ldp.eps_grid.iter().enumerate() {
        let stream = format!("ldp-{idx}");
        let ens = Ensemble {
            paths: cfg.ldp.paths,
            seed: cfg.seeds.base,
            stream: &stream,
            workers,
        };
        let e = match cfg.ldp.estimator {
            EstimatorName::Crude => mc_probability(setup, &event, eps, ens)?,
            EstimatorName::Importance => is_probability(setup, &event, eps, &shift, ens)?,
        };
        let rate = -eps * e.log_p;
        let gap = rate_gap(rate, i_star);
        floors |= e.floor;
        if e.floor {
            r.notes.push(format!("eps = {eps}: resolution floor, rate unresolved"));
        } else {
            gaps.push(gap);
        }
        r.push_row(vec![
            eps.into(),
            e.paths.into(),
            e.hits.into(),
            e.p.into(),
            e.lo.into(),
            e.hi.into(),
            e.log_p.into(),
            rate.into(),
            i_star.into(),
            gap.into(),
            e.floor.into(),
            Value::Float(e.ess.unwrap_or(f64::NAN)),
            cfg.seeds.base.into(),
            stream.as_str().into(),
        ]);
        r.stream(cfg.seeds.base, stream);
    }
    let worst = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    r.checks.push(Check::new(
        "gap_monotone",
        worst,
        "gap decreases with eps",
        gaps.len() >= 2 && worst < 0.0,
    ));
    if let Some(tol) = cfg.ldp.tolerance {
        let last = if floors { f64::INFINITY } else { *gaps.last().unwrap_or(&f64::INFINITY) };
        r.checks.push(Check::at_most("gap_at_smallest_eps", last, tol));
    }
    r.notes.push(format!("minimum action {i_star:.16e}"));
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok((r, shift))
}

/// `E x_norm²(q^ε_h − q_h)` on coupled seeds over the `eps` grid.
pub fn weak_convergence_study(cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<StudyReport> {
    let start = Instant::now();
    let w = &cfg.weak;
    let (h, _) = control_for(w.control, w.amplitude, w.control_path.as_deref(), cfg, setup)?;
    let sim = Simulator::new(&setup.model, &setup.noise, setup.t_final, setup.steps, setup.scheme)?;
    let key = StreamKey::new(cfg.seeds.base, "weak");
    let mut reference: Vec<Field64> = Vec::with_capacity(setup.steps + 1);
    sim.run(&setup.initial, 0.0, Drive::Control(&h), &key, |_, q| reference.push(q.clone()))?;
    let mut r = StudyReport::new("weak", &["eps", "paths", "mean_dist_sq", "std_err", "seed", "stream"]);
    r.stream(cfg.seeds.base, "weak");
    let mut means = Vec::new();
    for &eps in &w.eps_grid {
        let d = ensemble(workers, w.paths, |i| {
            let mut acc = XNormAccumulator::new(sim.dt());
            let mut diff_err = None;
            sim.run(&setup.initial, eps, Drive::Control(&h), &key.with_trajectory(i as u64), |n, q| {
                match q.sub(&reference[n]) {
                    Ok(d) => acc.push(&d),
                    Err(e) => diff_err = Some(e),
                }
            })?;
            if let Some(e) = diff_err {
                return Err(e.into());
            }
            Ok(acc.value_sq()?)
        })?;
        let mean = stats::mean(&d);
        let se = if d.len() > 1 {
            (stats::variance(&d) / d.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        means.push(mean);
        r.push_row(vec![
            eps.into(),
            w.paths.into(),
            mean.into(),
            se.into(),
            cfg.seeds.base.into(),
            "weak".into(),
        ]);
    }
    let additive = matches!(setup.noise.kind(), SigmaKind::Additive);
    let lx: Vec<f64> = w.eps_grid.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let fit = fit_line(&lx, &ly);
    r.notes.push(format!("log-log slope {:.16e}, r2 {:.16e}", fit.slope, fit.r2));
    if additive {
        let [lo, hi] = w.slope_range;
        r.checks.push(Check::new(
            "loglog_slope",
            fit.slope,
            format!("in [{lo}, {hi}]"),
            fit.slope >= lo && fit.slope <= hi,
        ));
    } else {
        let worst = means.windows(2).map(|m| m[1] - m[0]).fold(f64::NEG_INFINITY, f64::max);
        r.checks.push(Check::new(
            "distance_monotone",
            worst,
            "distance decreases with eps",
            worst < 0.0,
        ));
    }
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Smallest fraction of paths in the conditioning set before the study is
/// flagged.
pub const MIN_ACTIVE_FRACTION: f64 = 0.1;

/// `I_n = E[1_{G_N} ∫ ‖q(s) − q(s̄_n)‖² ds]` over dyadic levels, with `s̄_n`
/// the left end of the level-`n` cell. `G_N` requires both
/// `sup ‖q‖² ≤ N` and `∫ ‖∇q‖² ≤ N`.
pub fn time_increment_study(cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<StudyReport> {
    let start = Instant::now();
    let c = &cfg.increments;
    let fine = 1usize << c.fine_level;
    let sim = Simulator::new(&setup.model, &setup.noise, setup.t_final, fine, setup.scheme)?;
    let zeros = ControlPath::zeros(setup.t_final, fine + 1, setup.noise.dim())?;
    let (h, _) = match c.control {
        ControlSource::Zero => (zeros, None),
        src => {
            let (h, a) = control_for(src, c.amplitude, c.control_path.as_deref(), cfg, setup)?;
            (resample(&h, fine + 1)?, a)
        }
    };
    let dt = sim.dt();
    let levels: Vec<u32> = (c.min_level..=c.max_level).collect();
    let key = StreamKey::new(cfg.seeds.base, "increments");
    let per_path = ensemble(workers, c.paths, |i| {
        let mut states: Vec<Field64> = Vec::with_capacity(fine + 1);
        sim.run(&setup.initial, c.eps, Drive::Control(&h), &key.with_trajectory(i as u64), |_, q| {
            states.push(q.clone())
        })?;
        let sup = states.iter().map(|q| q.l2_sq()).fold(0.0, f64::max);
        let grad: Vec<f64> = states.windows(2).map(|w| 0.5 * dt * (w[0].grad_sq() + w[1].grad_sq())).collect();
        let active = sup <= c.threshold && stats::pairwise_sum(&grad) <= c.threshold;
        let mut out = Vec::with_capacity(levels.len());
        for &n in &levels {
            let cell = fine >> n;
            let mut terms = Vec::with_capacity(fine);
            for (m, q) in states[..fine].iter().enumerate() {
                let anchor = &states[m - m % cell];
                terms.push(dt * q.sub(anchor)?.l2_sq());
            }
            out.push(if active { stats::pairwise_sum(&terms) } else { 0.0 });
        }
        Ok((active, out))
    })?;
    let active = per_path.iter().filter(|(a, _)| *a).count();
    let fraction = active as f64 / c.paths as f64;
    let mut r = StudyReport::new(
        "increments",
        &["level", "paths", "active", "i_n", "std_err", "bound", "seed", "stream"],
    );
    r.stream(cfg.seeds.base, "increments");
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for li in 0..levels.len() {
        let v: Vec<f64> = per_path.iter().map(|(_, o)| o[li]).collect();
        values.push(stats::mean(&v));
        ses.push(if v.len() > 1 {
            (stats::variance(&v) / v.len() as f64).sqrt()
        } else {
            f64::NAN
        });
    }
    let c_fit = values[0] * 2f64.powf(levels[0] as f64 / 2.0);
    let mut worst = f64::NEG_INFINITY;
    for (li, &n) in levels.iter().enumerate() {
        let bound = c_fit * 2f64.powf(-(n as f64) / 2.0);
        if li > 0 {
            // 0/0 when nothing is active: no evidence, so the check fails.
            let ratio = values[li] / bound;
            worst = if ratio.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(ratio) };
        }
        r.push_row(vec![
            (n as usize).into(),
            c.paths.into(),
            active.into(),
            values[li].into(),
            ses[li].into(),
            bound.into(),
            cfg.seeds.base.into(),
            "increments".into(),
        ]);
    }
    let lx: Vec<f64> = levels.iter().map(|&n| n as f64).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.log2()).collect();
    if values.iter().all(|&v| v > 0.0) && levels.len() >= 2 {
        r.notes.push(format!("fitted base-2 decay exponent {:.16e}", -fit_line(&lx, &ly).slope));
    }
    r.notes.push(format!("C fitted at level {}: {:.16e}", levels[0], c_fit));
    r.checks.push(Check::at_least("active_fraction", fraction, MIN_ACTIVE_FRACTION));
    if fraction < MIN_ACTIVE_FRACTION {
        r.notes.push("conditioning set almost never active: threshold N too small".into());
    }
    r.checks.push(Check::at_most("max_ratio_to_bound", worst, 1.0));
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Energy statistic `sup ‖q‖² + ν ∫ sup_{τ≤s} ‖∇q(τ)‖² ds` over a ladder of
/// initial states `ξ = r·ξ̂`, fitted affinely in `‖ξ‖²`.
pub fn energy_bound_study(cfg: &RunConfig, setup: &Setup, workers: usize) -> Result<StudyReport> {
    let start = Instant::now();
    let e = &cfg.energy;
    if e.points < 3 {
        return Err(Error::Invalid("energy.points must be at least 3".into()));
    }
    let grid = *setup.grid();
    let shape = random_field(&grid, 1.0, &mut StreamKey::new(e.shape_seed, "energy-shape").rng_at(0));
    let nu = setup.model.params().nu;
    let key = StreamKey::new(cfg.seeds.base, "energy");
    let mut r = StudyReport::new("energy", &["xi_norm", "xi_norm_sq", "paths", "statistic", "std_err", "seed", "stream"]);
    r.stream(cfg.seeds.base, "energy");
    r.stream(e.shape_seed, "energy-shape");
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in 0..e.points {
        let norm = e.min_norm + (e.max_norm - e.min_norm) * p as f64 / (e.points - 1) as f64;
        let xi = shape.scaled(norm);
        let dt = match cfg.time.dt {
            crate::config::DtSpec::Fixed(dt) => dt,
            crate::config::DtSpec::Keyword(_) => {
                let cap = 0.01 * setup.t_final;
                setup.model.suggest_dt(&xi)?.map_or(cap, |d| d.min(cap))
            }
        };
        let steps = qg2_core::model::step_count(setup.t_final, dt)?;
        let sim = Simulator::new(&setup.model, &setup.noise, setup.t_final, steps, setup.scheme)?;
        let stat = ensemble(workers, e.paths, |i| {
            let mut acc = XNormAccumulator::new(sim.dt());
            sim.run(&xi, e.eps, Drive::Free, &key.with_trajectory(i as u64), |_, q| acc.push(q))?;
            Ok(acc.sup_l2_sq() + nu * acc.integral())
        })?;
        let mean = stats::mean(&stat);
        let se = if stat.len() > 1 {
            (stats::variance(&stat) / stat.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        xs.push(norm * norm);
        ys.push(mean);
        r.push_row(vec![
            norm.into(),
            (norm * norm).into(),
            e.paths.into(),
            mean.into(),
            se.into(),
            cfg.seeds.base.into(),
            "energy".into(),
        ]);
    }
    let fit = fit_line(&xs, &ys);
    r.notes.push(format!(
        "affine fit: intercept {:.16e}, slope {:.16e}",
        fit.intercept, fit.slope
    ));
    r.checks.push(Check::at_least("r2", fit.r2, e.min_r2));
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}
