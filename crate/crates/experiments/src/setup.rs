//! Turns a [`RunConfig`] into model objects.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use qg2_core::action::{read_control, ActionProblem, Budget, ControlPath, Direction, Observable, Target};
use qg2_core::forcing::{random_field, ModeCount, NoiseSpec, SigmaKind, StreamKey};
use qg2_core::model::{derive_params, step_count, ModelParams, PhysicalConstants, QgModel, Scheme};
use qg2_core::spectral::snapshot::read_field;
use qg2_core::spectral::{Dealias, GridSpec, LayeredField};
use qg2_core::{Field64, Model64, Noise64};

use crate::config::{
    ControlSource, DirectionName, DtSpec, InitialKind, LayersName, ModesKeyword, ModesSpec, ObservableName, RunConfig,
    SchemeName, SigmaName, TargetKind,
};
use crate::{Error, Result};

/// Derived nondimensional parameters, echoed into manifests.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Derived {
    pub f1: f64,
    pub f2: f64,
    pub r: f64,
    pub nu: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
}

/// Everything a study needs to simulate.
#[derive(Clone, Debug)]
pub struct Setup {
    pub model: Model64,
    pub noise: Noise64,
    pub initial: Field64,
    pub t_final: f64,
    pub dt: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub derived: Derived,
}

/// Largest auto step as a fraction of the horizon.
const AUTO_MAX_FRACTION: f64 = 0.01;

impl Setup {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let dealias: Dealias = cfg.grid.dealias.parse()?;
        let grid = GridSpec::new(cfg.grid.n, cfg.grid.length, dealias)?;
        let m = &cfg.model;
        let (f1, f2, r, nu) = match &cfg.physical {
            Some(p) => {
                let pc = PhysicalConstants {
                    f0: p.f0,
                    g: p.g,
                    h1: p.h1,
                    h2: p.h2,
                    rho0: p.rho0,
                    rho1: p.rho1,
                    rho2: p.rho2,
                    nu: p.nu,
                };
                let d = derive_params(&pc)?;
                (d.f1, d.f2, d.r, d.nu)
            }
            None => (
                m.f1.unwrap_or(0.0),
                m.f2.unwrap_or(0.0),
                m.r.unwrap_or(0.0),
                m.nu.ok_or_else(|| Error::Invalid("model.nu is required".into()))?,
            ),
        };
        let mut params = if m.barotropic {
            ModelParams {
                f1,
                f2,
                ..ModelParams::barotropic(m.beta, nu, r)
            }
        } else {
            ModelParams::new(f1, f2, m.beta, nu, r)
        };
        if !m.forcing.is_empty() {
            let mut f = vec![0.0; grid.modes()];
            for &[j, k, amp] in &m.forcing {
                let (j, k) = (j as usize, k as usize);
                if j == 0 || k == 0 || j > grid.n() || k > grid.n() {
                    return Err(Error::Invalid(format!("model.forcing: mode ({j}, {k}) outside the grid")));
                }
                f[grid.index(j, k)] += amp;
            }
            params = params.with_forcing(f);
        }
        let model = QgModel::from_grid(grid, params)?.with_nonlinear(m.nonlinear);
        let noise = build_noise(cfg, grid)?;
        let initial = build_initial(cfg, grid)?;
        let t_final = cfg.time.t_final;
        let dt_guess = match cfg.time.dt {
            DtSpec::Fixed(dt) => dt,
            DtSpec::Keyword(_) => {
                let cap = AUTO_MAX_FRACTION * t_final;
                model.suggest_dt(&initial)?.map_or(cap, |d| d.min(cap))
            }
        };
        let steps = step_count(t_final, dt_guess)?;
        let dt = t_final / steps as f64;
        let scheme = match m.scheme {
            SchemeName::Imex1 => Scheme::Imex1,
            SchemeName::Imex2 => Scheme::Imex2,
        };
        Ok(Self {
            derived: Derived {
                f1,
                f2,
                r,
                nu,
                beta: m.beta,
                dt,
                steps,
            },
            model,
            noise,
            initial,
            t_final,
            dt,
            steps,
            scheme,
        })
    }

    pub fn grid(&self) -> &GridSpec<f64> {
        self.model.grid()
    }

    /// Zero control on the simulation time grid.
    pub fn zero_control(&self) -> ControlPath<f64> {
        ControlPath::zeros(self.t_final, self.steps + 1, self.noise.dim()).expect("validated horizon")
    }
}

fn sigma(kind: SigmaName, a: f64, b: f64) -> SigmaKind<f64> {
    match kind {
        SigmaName::Additive => SigmaKind::Additive,
        SigmaName::Multiplicative => SigmaKind::Multiplicative { a, b },
    }
}

fn build_noise(cfg: &RunConfig, grid: GridSpec<f64>) -> Result<Noise64> {
    let n = &cfg.noise;
    let count = match n.modes {
        ModesSpec::Count(c) => ModeCount::Count(c),
        ModesSpec::Keyword(ModesKeyword::Default) => ModeCount::Default,
        ModesSpec::Keyword(ModesKeyword::All) => ModeCount::All,
    };
    let layers = match n.layers {
        LayersName::Both => [true, true],
        LayersName::Top => [true, false],
        LayersName::Bottom => [false, true],
    };
    let mut spec = NoiseSpec::new(grid, n.c, n.s, count, sigma(n.kind, n.a, n.b), layers)?;
    if n.tilde_kind.is_some() || n.tilde_a.is_some() || n.tilde_b.is_some() {
        let kind = n.tilde_kind.unwrap_or(n.kind);
        spec = spec.with_tilde(sigma(kind, n.tilde_a.unwrap_or(n.a), n.tilde_b.unwrap_or(n.b)))?;
    }
    if n.layer_scale != [1.0, 1.0] {
        spec = spec.with_layer_scale(n.layer_scale)?;
    }
    Ok(spec)
}

fn build_initial(cfg: &RunConfig, grid: GridSpec<f64>) -> Result<Field64> {
    let i = &cfg.initial;
    match i.kind {
        InitialKind::Zero => Ok(LayeredField::zeros(grid)),
        InitialKind::Mode => {
            if i.layer > 1 || i.j == 0 || i.k == 0 || i.j > grid.n() || i.k > grid.n() {
                return Err(Error::Invalid(format!(
                    "initial: mode (layer {}, {}, {}) outside the grid",
                    i.layer, i.j, i.k
                )));
            }
            Ok(LayeredField::single_mode(grid, i.layer, i.j, i.k, i.amplitude))
        }
        InitialKind::Random => {
            let mut rng = StreamKey::new(i.seed, "initial").rng_at(0);
            Ok(random_field(&grid, i.amplitude, &mut rng))
        }
    }
}

/// Event `{Φ ≥ τ}` or `{Φ ≤ τ}` on path statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventSpec {
    pub observable: Observable,
    pub threshold: f64,
    pub direction: Direction,
}

impl EventSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let e = &cfg.event;
        let observable = match e.observable {
            ObservableName::Mode => Observable::ModeAmplitude {
                layer: e.layer,
                j: e.j,
                k: e.k,
            },
            ObservableName::L2 => Observable::TerminalL2,
            ObservableName::RunningMaxL2 => Observable::RunningMaxL2,
        };
        if let Observable::ModeAmplitude { layer, j, k } = observable {
            let n = cfg.grid.n;
            if layer > 1 || j == 0 || k == 0 || j > n || k > n {
                return Err(Error::Invalid(format!("event: mode (layer {layer}, {j}, {k}) outside the grid")));
            }
        }
        if e.threshold.is_nan() {
            return Err(Error::Invalid("event.threshold is NaN".into()));
        }
        Ok(Self {
            observable,
            threshold: e.threshold,
            direction: match e.direction {
                DirectionName::Above => Direction::Above,
                DirectionName::Below => Direction::Below,
            },
        })
    }

    pub fn holds(&self, value: f64) -> bool {
        match self.direction {
            Direction::Above => value >= self.threshold,
            Direction::Below => value <= self.threshold,
        }
    }

    pub fn as_target(&self) -> Target<f64> {
        Target::Level {
            observable: self.observable,
            threshold: self.threshold,
            direction: self.direction,
        }
    }
}

/// The `[action]` problem over the simulation horizon.
pub fn action_problem<'a>(cfg: &RunConfig, setup: &'a Setup) -> Result<ActionProblem<'a, f64>> {
    let a = &cfg.action;
    let target = match a.target {
        TargetKind::Event => EventSpec::from_config(cfg)?.as_target(),
        TargetKind::Ball => {
            let center = match &a.ball_center {
                Some(path) => {
                    let dealias: Dealias = cfg.grid.dealias.parse()?;
                    let (f, _) = read_field(&mut BufReader::new(File::open(path)?), dealias)?;
                    f
                }
                None => {
                    let free = setup.model.integrate(
                        &setup.initial,
                        setup.t_final,
                        setup.t_final / (a.n_t - 1) as f64,
                        Scheme::Imex1,
                    )?;
                    free.final_state().clone()
                }
            };
            Target::Ball {
                center,
                radius: a.ball_radius,
            }
        }
    };
    let mut p = ActionProblem::new(&setup.model, &setup.noise, setup.initial.clone(), setup.t_final, a.n_t, target)?
        .with_mu(a.mu)?
        .with_budget(Budget {
            max_iters: a.max_iters,
            max_stages: a.max_stages,
            memory: a.memory,
            grad_tol: a.grad_tol,
        });
    if let Some(cap) = a.cap {
        p = p.with_cap(cap)?;
    }
    if let Some(tol) = a.tolerance {
        p = p.with_tolerance(tol)?;
    }
    Ok(p)
}

/// Resamples a control onto `n_t` nodes by linear interpolation in time.
pub fn resample(h: &ControlPath<f64>, n_t: usize) -> Result<ControlPath<f64>> {
    if h.n_t() == n_t {
        return Ok(h.clone());
    }
    let mut out = ControlPath::zeros(h.t_final(), n_t, h.dim())?;
    let scale = (h.n_t() - 1) as f64 / (n_t - 1) as f64;
    for n in 0..n_t {
        let s = n as f64 * scale;
        let i = (s.floor() as usize).min(h.n_t() - 2);
        let w = s - i as f64;
        let (a, b) = (h.at(i).to_vec(), h.at(i + 1).to_vec());
        for (o, (x, y)) in out.at_mut(n).iter_mut().zip(a.iter().zip(&b)) {
            *o = (1.0 - w) * x + w * y;
        }
    }
    Ok(out)
}

/// Control for a study, on the simulation grid of `setup`.
pub fn control_for(
    source: ControlSource,
    amplitude: f64,
    path: Option<&str>,
    cfg: &RunConfig,
    setup: &Setup,
) -> Result<(ControlPath<f64>, Option<f64>)> {
    let n_t = setup.steps + 1;
    match source {
        ControlSource::Zero => Ok((setup.zero_control(), None)),
        ControlSource::Constant => {
            let mut h = vec![0.0; setup.noise.dim()];
            let first = (0..2)
                .find(|&l| setup.noise.is_active(l))
                .ok_or_else(|| Error::Invalid("noise has no active layer".into()))?;
            h[first * setup.noise.m()] = amplitude;
            Ok((ControlPath::constant(setup.t_final, n_t, &h)?, None))
        }
        ControlSource::File => {
            let p = path.ok_or_else(|| Error::Invalid("control source `file` needs control_path".into()))?;
            let h = read_control(&mut BufReader::new(File::open(Path::new(p))?), &setup.noise)?;
            if (h.t_final() - setup.t_final).abs() > 1e-12 * setup.t_final {
                return Err(Error::Invalid(format!(
                    "control horizon {} differs from time.t_final {}",
                    h.t_final(),
                    setup.t_final
                )));
            }
            Ok((resample(&h, n_t)?, None))
        }
        ControlSource::Instanton => {
            let problem = action_problem(cfg, setup)?;
            let report = qg2_core::action::minimize_action(&problem)?;
            if !report.feasible {
                return Err(Error::Infeasible(format!(
                    "minimum-action problem stopped with violation {:.3e}",
                    report.violation
                )));
            }
            Ok((resample(&report.control, n_t)?, Some(report.action)))
        }
    }
}
