//! Single-path simulation and deterministic parallel ensembles.

use rayon::prelude::*;

use qg2_core::action::ControlPath;
use qg2_core::forcing::{sample_increment, StochasticStepper, StreamKey};
use qg2_core::model::Scheme;
use qg2_core::{Error as CoreError, Field64, Model64, Noise64};

use crate::{Error, Result};

/// What drives a path besides the noise.
#[derive(Clone, Copy, Debug)]
pub enum Drive<'a> {
    Free,
    /// Importance-sampling drift: `dW → dW + ε^{-1/2} h dt`, with likelihood
    /// ratio accumulated in log space.
    Shift(&'a ControlPath<f64>),
    /// Control entering through `σ̃(q) h dt`.
    Control(&'a ControlPath<f64>),
}

impl Drive<'_> {
    fn path(&self) -> Option<&ControlPath<f64>> {
        match self {
            Drive::Free => None,
            Drive::Shift(h) | Drive::Control(h) => Some(h),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathSummary {
    pub terminal: Field64,
    pub running_max_l2: f64,
    pub log_weight: f64,
}

/// Fixed-step stochastic integrator shared by all paths of an ensemble.
pub struct Simulator<'m> {
    stepper: StochasticStepper<'m, f64>,
    steps: usize,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m Model64, noise: &'m Noise64, t_final: f64, steps: usize, scheme: Scheme) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("need at least one step".into()));
        }
        let stepper = StochasticStepper::new(model.stepper(t_final / steps as f64, scheme)?, noise)?;
        Ok(Self { stepper, steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt()
    }

    pub fn noise(&self) -> &Noise64 {
        self.stepper.noise()
    }

    /// Runs one path from `q0`; `observe(n, q)` sees every state including
    /// the initial one (`n = 0`).
    pub fn run(
        &self,
        q0: &Field64,
        eps: f64,
        drive: Drive<'_>,
        key: &StreamKey,
        mut observe: impl FnMut(usize, &Field64),
    ) -> Result<PathSummary> {
        if let Some(h) = drive.path() {
            if h.n_t() != self.steps + 1 || h.dim() != self.noise().dim() {
                return Err(Error::Invalid(format!(
                    "control has {} nodes of dimension {}, the simulation needs {} of dimension {}",
                    h.n_t(),
                    h.dim(),
                    self.steps + 1,
                    self.noise().dim()
                )));
            }
        }
        if matches!(drive, Drive::Shift(_)) && !(eps > 0.0) {
            return Err(Error::Invalid("an importance-sampling shift needs eps > 0".into()));
        }
        let noise = self.noise();
        let eig = noise.eigenvalues();
        let dt = self.dt();
        let mut q = q0.clone();
        let mut running = q.l2();
        let mut log_weight = 0.0;
        observe(0, &q);
        for n in 0..self.steps {
            let mut inc = sample_increment(noise, dt, &mut key.rng_at(n as u64));
            q = match drive {
                Drive::Free => self.stepper.step_em(&q, eps, &inc)?,
                Drive::Control(h) => self.stepper.step_controlled(&q, Some(&h.midpoint(n)), eps, &inc)?,
                Drive::Shift(h) => {
                    let hbar = h.midpoint(n);
                    let root = eps.sqrt();
                    for ((w, &hv), &qk) in inc.coeffs.iter_mut().zip(&hbar).zip(&eig) {
                        if qk > 0.0 {
                            log_weight -= hv * *w / (root * qk) + hv * hv * dt / (2.0 * eps * qk);
                            *w += dt * hv / root;
                        }
                    }
                    self.stepper.step_em(&q, eps, &inc)?
                }
            };
            if !q.is_finite() {
                return Err(CoreError::NonFinite { step: n + 1 }.into());
            }
            running = running.max(q.l2());
            observe(n + 1, &q);
        }
        Ok(PathSummary {
            terminal: q,
            running_max_l2: running,
            log_weight,
        })
    }
}

/// Maps `f` over path indices `0..n` on `workers` threads (0: all cores).
/// Results come back in index order, so reductions over them do not depend
/// on the worker count.
pub fn ensemble<R: Send>(workers: usize, n: usize, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}
