//! Control paths in the Cameron–Martin space, the skeleton equation, the
//! action functional and its minimization.
//!
//! A control is sampled on `n_t` uniform nodes of `[0, T]`. The skeleton is
//! advanced with the first-order IMEX stepper, the control entering step `n`
//! as the node average `½(h_n + h_{n+1})`. The action is the trapezoidal rule
//! for `½∫‖h‖₀² dt`. Gradients come from the exact discrete adjoint of that
//! stepper, so they agree with finite differences of the discrete objective.

mod lbfgs;

use std::cell::Cell;
use std::io::{BufRead, Write};

use crate::forcing::{apply_sigma, apply_sigma_dq_t, apply_sigma_t, NoiseSpec};
use crate::model::{apply_blocks, QgModel, Scheme, Stepper, Trajectory};
use crate::spectral::snapshot::{read_values, write_values, SnapshotHeader, SnapshotKind};
use crate::spectral::LayeredField;
use crate::{Error, Result, Scalar};

/// Control coordinates `h_k(t_n)` on a uniform time grid, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath<T> {
    t_final: T,
    n_t: usize,
    dim: usize,
    coeffs: Vec<T>,
}

impl<T: Scalar> ControlPath<T> {
    pub fn zeros(t_final: T, n_t: usize, dim: usize) -> Result<Self> {
        Self::from_coeffs(t_final, n_t, dim, vec![T::zero(); n_t * dim])
    }

    pub fn from_coeffs(t_final: T, n_t: usize, dim: usize, coeffs: Vec<T>) -> Result<Self> {
        if !(t_final > T::zero()) || !t_final.is_finite() {
            return Err(Error::InvalidParameter {
                name: "T",
                reason: format!("horizon must be positive, got {t_final}"),
            });
        }
        if n_t < 2 {
            return Err(Error::InvalidParameter {
                name: "n_t",
                reason: format!("need at least 2 time nodes, got {n_t}"),
            });
        }
        if coeffs.len() != n_t * dim {
            return Err(Error::DimensionMismatch {
                expected: n_t * dim,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            t_final,
            n_t,
            dim,
            coeffs,
        })
    }

    /// The same coordinates at every node.
    pub fn constant(t_final: T, n_t: usize, h: &[T]) -> Result<Self> {
        let coeffs = (0..n_t).flat_map(|_| h.iter().copied()).collect();
        Self::from_coeffs(t_final, n_t, h.len(), coeffs)
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.n_t - 1
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_usize_exact(self.steps())
    }

    pub fn at(&self, n: usize) -> &[T] {
        &self.coeffs[n * self.dim..(n + 1) * self.dim]
    }

    pub fn at_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.coeffs[n * self.dim..(n + 1) * self.dim]
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    /// `½(h_n + h_{n+1})`, the value used over step `n`.
    pub fn midpoint(&self, n: usize) -> Vec<T> {
        let half = T::lit(0.5);
        self.at(n).iter().zip(self.at(n + 1)).map(|(&a, &b)| half * (a + b)).collect()
    }

    /// Trapezoidal quadrature weight of node `n` (without `dt`).
    pub fn weight(&self, n: usize) -> T {
        if n == 0 || n + 1 == self.n_t {
            T::lit(0.5)
        } else {
            T::one()
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&v| a * v).collect(),
            ..self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    fn check(&self, noise: &NoiseSpec<T>) -> Result<()> {
        if self.dim != noise.dim() {
            return Err(Error::DimensionMismatch {
                expected: noise.dim(),
                got: self.dim,
            });
        }
        Ok(())
    }
}

/// `½ Σ_n w_n dt ‖h_n‖₀²` with trapezoidal weights `w_n`.
pub fn action<T: Scalar>(noise: &NoiseSpec<T>, h: &ControlPath<T>) -> Result<T> {
    h.check(noise)?;
    let mut s = T::zero();
    for n in 0..h.n_t() {
        s = s + h.weight(n) * noise.h0_norm_sq(h.at(n))?;
    }
    Ok(T::lit(0.5) * h.dt() * s)
}

/// `∫‖h‖₀² dt` by the same quadrature, the quantity bounded by `M` in `S_M`.
pub fn energy<T: Scalar>(noise: &NoiseSpec<T>, h: &ControlPath<T>) -> Result<T> {
    Ok(T::lit(2.0) * action(noise, h)?)
}

pub fn in_s_m<T: Scalar>(noise: &NoiseSpec<T>, h: &ControlPath<T>, cap: T) -> Result<bool> {
    Ok(energy(noise, h)? <= cap)
}

fn stepper_for<'m, T: Scalar>(model: &'m QgModel<T>, noise: &NoiseSpec<T>, h: &ControlPath<T>) -> Result<Stepper<'m, T>> {
    if model.grid() != noise.grid() {
        return Err(Error::GridMismatch);
    }
    h.check(noise)?;
    model.stepper(h.dt(), Scheme::Imex1)
}

fn skeleton_step<T: Scalar>(
    stepper: &Stepper<'_, T>,
    noise: &NoiseSpec<T>,
    q: &LayeredField<T>,
    hbar: &[T],
) -> Result<LayeredField<T>> {
    let model = stepper.model();
    if hbar.iter().all(|&v| v == T::zero()) {
        return stepper.step(q);
    }
    let drive = apply_sigma(model.spectral(), noise, noise.tilde_kind(), q, hbar)?;
    stepper.step_with(q, Some(&drive.scaled(stepper.dt())))
}

/// Integrates `dq + [Aq + F(q)]dt = σ̃(q)h dt` from `xi` over the control's
/// time grid.
pub fn skeleton_solve<T: Scalar>(
    model: &QgModel<T>,
    noise: &NoiseSpec<T>,
    h: &ControlPath<T>,
    xi: &LayeredField<T>,
) -> Result<Trajectory<T>> {
    let stepper = stepper_for(model, noise, h)?;
    xi.ensure_same_grid(&LayeredField::zeros(*model.grid()))?;
    let mut states = Vec::with_capacity(h.n_t());
    states.push(xi.clone());
    for n in 0..h.steps() {
        let next = skeleton_step(&stepper, noise, &states[n], &h.midpoint(n))?;
        if !next.is_finite() {
            return Err(Error::NonFinite { step: n + 1 });
        }
        states.push(next);
    }
    Ok(Trajectory { dt: h.dt(), states })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `Φ ≥ τ`.
    Above,
    /// `Φ ≤ τ`.
    Below,
}

/// Scalar path functionals used for targets and rare events.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    /// `⟨q(T), e_k⟩` for the orthonormal mode `e_k = (2/L) sin sin`.
    ModeAmplitude { layer: usize, j: usize, k: usize },
    /// `‖q(T)‖`.
    TerminalL2,
    /// `sup_t ‖q(t)‖`.
    RunningMaxL2,
}

impl Observable {
    /// Value from the terminal state and the running maximum of `‖q‖`.
    pub fn evaluate<T: Scalar>(&self, terminal: &LayeredField<T>, running_max_l2: T) -> T {
        match *self {
            Observable::ModeAmplitude { layer, j, k } => {
                let g = terminal.grid();
                terminal.layer(layer)[g.index(j, k)] * g.length() * T::lit(0.5)
            }
            Observable::TerminalL2 => terminal.l2(),
            Observable::RunningMaxL2 => running_max_l2,
        }
    }

    pub fn evaluate_path<T: Scalar>(&self, states: &[LayeredField<T>]) -> Result<T> {
        let last = states.last().ok_or(Error::EmptyTrajectory)?;
        let sup = states.iter().map(|q| q.l2()).fold(T::zero(), T::max);
        Ok(self.evaluate(last, sup))
    }

    fn is_terminal(&self) -> bool {
        !matches!(self, Observable::RunningMaxL2)
    }

    fn validate<T: Scalar>(&self, field: &LayeredField<T>) -> Result<()> {
        if let Observable::ModeAmplitude { layer, j, k } = *self {
            let n = field.grid().n();
            if layer > 1 || j == 0 || k == 0 || j > n || k > n {
                return Err(Error::InvalidParameter {
                    name: "observable",
                    reason: format!("mode (layer {layer}, {j}, {k}) outside the {n}×{n} grid"),
                });
            }
        }
        Ok(())
    }

    /// `∂Φ/∂q(T)` in coefficient space, for terminal observables.
    fn gradient<T: Scalar>(&self, terminal: &LayeredField<T>) -> LayeredField<T> {
        let g = *terminal.grid();
        match *self {
            Observable::ModeAmplitude { layer, j, k } => {
                LayeredField::single_mode(g, layer, j, k, g.length() * T::lit(0.5))
            }
            Observable::TerminalL2 => {
                let norm = terminal.l2();
                if norm > T::zero() {
                    terminal.scaled(g.parseval() / norm)
                } else {
                    LayeredField::zeros(g)
                }
            }
            Observable::RunningMaxL2 => LayeredField::zeros(g),
        }
    }
}

/// Terminal target set.
#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    Level {
        observable: Observable,
        threshold: T,
        direction: Direction,
    },
    Ball { center: LayeredField<T>, radius: T },
}

impl<T: Scalar> Target<T> {
    /// Distance outside the target set (zero when reached).
    pub fn violation(&self, terminal: &LayeredField<T>) -> T {
        match self {
            Target::Level {
                observable,
                threshold,
                direction,
            } => {
                let phi = observable.evaluate(terminal, T::zero());
                match direction {
                    Direction::Above => (*threshold - phi).max(T::zero()),
                    Direction::Below => (phi - *threshold).max(T::zero()),
                }
            }
            Target::Ball { center, radius } => {
                let d = terminal.sub(center).map(|d| d.l2()).unwrap_or_else(|_| T::infinity());
                (d - *radius).max(T::zero())
            }
        }
    }

    /// Default feasibility tolerance: `ρ/10` for balls, `10⁻³|τ|` for levels.
    pub fn default_tolerance(&self) -> T {
        match self {
            Target::Level { threshold, .. } => T::lit(1e-3) * threshold.abs().max(T::lit(1e-12)),
            Target::Ball { radius, .. } => T::lit(0.1) * *radius,
        }
    }

    /// `violation²` and its gradient with respect to the terminal state.
    fn penalty(&self, terminal: &LayeredField<T>) -> (T, LayeredField<T>) {
        let v = self.violation(terminal);
        let g = *terminal.grid();
        if v == T::zero() {
            return (T::zero(), LayeredField::zeros(g));
        }
        let dv = match self {
            Target::Level {
                observable, direction, ..
            } => {
                let grad = observable.gradient(terminal);
                match direction {
                    Direction::Above => grad.scaled(-T::one()),
                    Direction::Below => grad,
                }
            }
            Target::Ball { center, .. } => {
                let diff = terminal.sub(center).expect("grid checked at construction");
                let d = diff.l2();
                diff.scaled(g.parseval() / d)
            }
        };
        (v * v, dv.scaled(T::lit(2.0) * v))
    }
}

/// Optimizer limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    /// Accepted quasi-Newton iterations summed over all penalty stages.
    pub max_iters: usize,
    /// Penalty doublings.
    pub max_stages: usize,
    pub memory: usize,
    /// Stop a stage when the preconditioned gradient norm falls below
    /// `grad_tol·√|objective|`.
    pub grad_tol: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            max_stages: 40,
            memory: 12,
            grad_tol: 1e-9,
        }
    }
}

/// Penalized minimum-action problem.
#[derive(Clone, Debug)]
pub struct ActionProblem<'a, T: Scalar> {
    model: &'a QgModel<T>,
    noise: &'a NoiseSpec<T>,
    xi: LayeredField<T>,
    t_final: T,
    n_t: usize,
    target: Target<T>,
    mu: T,
    cap: Option<T>,
    budget: Budget,
    tolerance: T,
}

impl<'a, T: Scalar> ActionProblem<'a, T> {
    pub fn new(
        model: &'a QgModel<T>,
        noise: &'a NoiseSpec<T>,
        xi: LayeredField<T>,
        t_final: T,
        n_t: usize,
        target: Target<T>,
    ) -> Result<Self> {
        if model.grid() != noise.grid() || xi.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        ControlPath::<T>::zeros(t_final, n_t, 0)?;
        match &target {
            Target::Level { observable, threshold, .. } => {
                if !observable.is_terminal() {
                    return Err(Error::InvalidParameter {
                        name: "target.observable",
                        reason: "only terminal observables can be targeted".into(),
                    });
                }
                observable.validate(&xi)?;
                if !threshold.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "target.threshold",
                        reason: format!("must be finite, got {threshold}"),
                    });
                }
            }
            Target::Ball { center, radius } => {
                if center.grid() != model.grid() {
                    return Err(Error::GridMismatch);
                }
                if !(*radius >= T::zero()) {
                    return Err(Error::InvalidParameter {
                        name: "target.radius",
                        reason: format!("must be non-negative, got {radius}"),
                    });
                }
            }
        }
        let tolerance = target.default_tolerance();
        Ok(Self {
            model,
            noise,
            xi,
            t_final,
            n_t,
            target,
            mu: T::one(),
            cap: None,
            budget: Budget::default(),
            tolerance,
        })
    }

    pub fn with_mu(mut self, mu: T) -> Result<Self> {
        if !(mu > T::zero()) || !mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("penalty weight must be positive, got {mu}"),
            });
        }
        self.mu = mu;
        Ok(self)
    }

    /// Restricts controls to `S_M = {∫‖h‖₀² ≤ M}`.
    pub fn with_cap(mut self, cap: T) -> Result<Self> {
        if !(cap > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "M",
                reason: format!("must be positive, got {cap}"),
            });
        }
        self.cap = Some(cap);
        Ok(self)
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_tolerance(mut self, tol: T) -> Result<Self> {
        if !(tol > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "tolerance",
                reason: format!("must be positive, got {tol}"),
            });
        }
        self.tolerance = tol;
        Ok(self)
    }

    pub fn model(&self) -> &QgModel<T> {
        self.model
    }

    pub fn noise(&self) -> &NoiseSpec<T> {
        self.noise
    }

    pub fn initial(&self) -> &LayeredField<T> {
        &self.xi
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn target(&self) -> &Target<T> {
        &self.target
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn tolerance(&self) -> T {
        self.tolerance
    }

    pub fn zero_control(&self) -> ControlPath<T> {
        ControlPath::zeros(self.t_final, self.n_t, self.noise.dim()).expect("validated at construction")
    }

    fn check(&self, h: &ControlPath<T>) -> Result<()> {
        h.check(self.noise)?;
        if h.n_t() != self.n_t || h.t_final() != self.t_final {
            return Err(Error::InvalidParameter {
                name: "control",
                reason: format!(
                    "time grid ({} nodes on [0, {}]) differs from the problem's ({} nodes on [0, {}])",
                    h.n_t(),
                    h.t_final(),
                    self.n_t,
                    self.t_final
                ),
            });
        }
        Ok(())
    }

    pub fn skeleton(&self, h: &ControlPath<T>) -> Result<Trajectory<T>> {
        self.check(h)?;
        skeleton_solve(self.model, self.noise, h, &self.xi)
    }

    pub fn violation(&self, h: &ControlPath<T>) -> Result<T> {
        Ok(self.target.violation(self.skeleton(h)?.final_state()))
    }

    /// `action(h) + μ·violation²` at the problem's `μ`.
    pub fn objective(&self, h: &ControlPath<T>) -> Result<T> {
        self.objective_at(h, self.mu)
    }

    fn objective_at(&self, h: &ControlPath<T>, mu: T) -> Result<T> {
        let traj = self.skeleton(h)?;
        let (p, _) = self.target.penalty(traj.final_state());
        Ok(action(self.noise, h)? + mu * p)
    }

    /// Objective and its exact gradient at the problem's `μ`.
    pub fn gradient(&self, h: &ControlPath<T>) -> Result<(T, ControlPath<T>)> {
        let (f, g, _) = self.objective_and_gradient(h, self.mu)?;
        Ok((f, g))
    }

    /// Objective, gradient and terminal violation.
    fn objective_and_gradient(&self, h: &ControlPath<T>, mu: T) -> Result<(T, ControlPath<T>, T)> {
        self.check(h)?;
        let stepper = stepper_for(self.model, self.noise, h)?;
        let traj = skeleton_solve(self.model, self.noise, h, &self.xi)?;
        let terminal = traj.final_state();
        let (p, dp) = self.target.penalty(terminal);
        let violation = self.target.violation(terminal);
        let f = action(self.noise, h)? + mu * p;

        let dt = h.dt();
        let dim = h.dim();
        let mut grad = ControlPath::zeros(h.t_final(), h.n_t(), dim)?;
        let eig = self.noise.eigenvalues();
        for n in 0..h.n_t() {
            let w = h.weight(n) * dt;
            for ((g, &v), &q) in grad.at_mut(n).iter_mut().zip(h.at(n)).zip(&eig) {
                if q > T::zero() {
                    *g = w * v / q;
                }
            }
        }

        let model = self.model;
        let spectral = model.spectral();
        let tilde = self.noise.tilde_kind();
        let mut lam = dp.scaled(mu);
        let half = T::lit(0.5);
        for n in (0..h.steps()).rev() {
            let q = &traj.states[n];
            let nu = apply_blocks(stepper.implicit_blocks(), &lam, true);
            let hbar = h.midpoint(n);
            let dh = apply_sigma_t(spectral, self.noise, tilde, q, &nu);
            for (c, &v) in dh.iter().enumerate() {
                if eig[c] > T::zero() {
                    let g = half * dt * v;
                    grad.at_mut(n)[c] = grad.at(n)[c] + g;
                    grad.at_mut(n + 1)[c] = grad.at(n + 1)[c] + g;
                }
            }
            if n == 0 {
                break;
            }
            let mut next = nu.clone();
            next.axpy(dt, &model.explicit_tendency_adjoint(q, &nu)?)?;
            if hbar.iter().any(|&v| v != T::zero()) {
                next.axpy(dt, &apply_sigma_dq_t(spectral, self.noise, tilde, q, &hbar, &nu)?)?;
            }
            lam = next;
        }
        Ok((f, grad, violation))
    }

    /// Scales `h` into `S_M` when a cap is set.
    fn project(&self, coeffs: &mut [T]) {
        let Some(cap) = self.cap else { return };
        let h = ControlPath::from_coeffs(self.t_final, self.n_t, self.noise.dim(), coeffs.to_vec())
            .expect("shape fixed by the optimizer");
        if let Ok(e) = energy(self.noise, &h) {
            if e > cap {
                let s = (cap / e).sqrt();
                coeffs.iter_mut().for_each(|v| *v = *v * s);
            }
        }
    }
}

/// One accepted optimizer iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord<T> {
    pub iter: usize,
    pub stage: usize,
    pub mu: T,
    pub objective: T,
    pub action: T,
    pub violation: T,
    pub step: T,
}

#[derive(Clone, Debug)]
pub struct MinimizerReport<T> {
    pub control: ControlPath<T>,
    /// `action(control)`, recomputed after the optimizer stops.
    pub action: T,
    pub trajectory: Trajectory<T>,
    pub violation: T,
    pub feasible: bool,
    /// Penalty weight of the final stage.
    pub mu: T,
    pub evaluations: usize,
    pub log: Vec<IterRecord<T>>,
}

impl<T: Scalar> MinimizerReport<T> {
    /// Iteration log as CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iterate,stage,mu,objective,action,violation,step")?;
        for r in &self.log {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.iter,
                r.stage,
                r.mu.to_f64_lossy(),
                r.objective.to_f64_lossy(),
                r.action.to_f64_lossy(),
                r.violation.to_f64_lossy(),
                r.step.to_f64_lossy()
            )?;
        }
        Ok(())
    }
}

/// Quasi-Newton descent on `action + μ·violation²`, doubling `μ` until the
/// terminal violation is within tolerance or the budget runs out.
pub fn minimize_action<T: Scalar>(problem: &ActionProblem<'_, T>) -> Result<MinimizerReport<T>> {
    let noise = problem.noise;
    let mut h = problem.zero_control();
    let dt = h.dt();
    let dim = noise.dim();
    let eig = noise.eigenvalues();
    let mut precond = Vec::with_capacity(h.coeffs().len());
    for n in 0..h.n_t() {
        let w = h.weight(n) * dt;
        precond.extend(eig.iter().map(|&q| q / w));
    }
    let settings_for = |remaining: usize| lbfgs::Settings {
        memory: problem.budget.memory,
        max_iters: remaining,
        grad_tol: T::lit(problem.budget.grad_tol),
    };
    let mut mu = problem.mu;
    let mut log = Vec::new();
    let mut evaluations = 0;
    let mut used = 0;
    let (t_final, n_t) = (problem.t_final, problem.n_t);
    let project = |c: &mut [T]| problem.project(c);
    for stage in 0..problem.budget.max_stages.max(1) {
        if problem.violation(&h)? <= problem.tolerance || used >= problem.budget.max_iters {
            break;
        }
        if stage > 0 {
            mu = mu * T::lit(2.0);
        }
        let last_violation = Cell::new(T::zero());
        let mut eval = |x: &[T]| -> Result<(T, Vec<T>)> {
            let path = ControlPath::from_coeffs(t_final, n_t, dim, x.to_vec())?;
            let (f, g, v) = problem.objective_and_gradient(&path, mu)?;
            last_violation.set(v);
            Ok((f, g.coeffs))
        };
        let mut accepted = |iter: usize, x: &[T], f: T, step: T| -> Result<()> {
            let path = ControlPath::from_coeffs(t_final, n_t, dim, x.to_vec())?;
            log.push(IterRecord {
                iter: used + iter,
                stage,
                mu,
                objective: f,
                action: action(noise, &path)?,
                violation: last_violation.get(),
                step,
            });
            Ok(())
        };
        let out = lbfgs::minimize(
            h.coeffs.clone(),
            &precond,
            &settings_for(problem.budget.max_iters - used),
            &project,
            &mut eval,
            &mut accepted,
        )?;
        used += out.iterations;
        evaluations += out.evaluations;
        h.coeffs = out.x;
    }
    let trajectory = problem.skeleton(&h)?;
    let violation = problem.target.violation(trajectory.final_state());
    Ok(MinimizerReport {
        action: action(noise, &h)?,
        control: h,
        trajectory,
        violation,
        feasible: violation <= problem.tolerance,
        mu,
        evaluations,
        log,
    })
}

/// Writes a control as `n_t` embedded field blocks under a `kind=control` header.
pub fn write_control<W: Write, T: Scalar>(w: &mut W, noise: &NoiseSpec<T>, h: &ControlPath<T>) -> Result<()> {
    h.check(noise)?;
    let grid = noise.grid();
    SnapshotHeader {
        n: grid.n(),
        length: grid.length().to_f64_lossy(),
        kind: SnapshotKind::Control,
        extra: vec![
            ("nt".into(), h.n_t().to_string()),
            ("T".into(), format!("{:?}", h.t_final().to_f64_lossy())),
        ],
    }
    .write(w)?;
    for n in 0..h.n_t() {
        write_values(w, noise.embed(h.at(n))?.coeffs())?;
    }
    Ok(())
}

/// Reads a control written by [`write_control`] back into coordinates of `noise`.
pub fn read_control<R: BufRead, T: Scalar>(r: &mut R, noise: &NoiseSpec<T>) -> Result<ControlPath<T>> {
    let header = SnapshotHeader::read(r)?;
    let grid = noise.grid();
    if header.kind != SnapshotKind::Control {
        return Err(Error::Snapshot(format!("expected a control block, got kind={}", header.kind.as_str())));
    }
    if header.n != grid.n() || header.length != grid.length().to_f64_lossy() {
        return Err(Error::GridMismatch);
    }
    let field = |key: &str| header.extra(key).ok_or_else(|| Error::Snapshot(format!("missing `{key}`")));
    let n_t: usize = field("nt")?
        .parse()
        .map_err(|_| Error::Snapshot("bad value for `nt`".into()))?;
    let t_final: f64 = field("T")?
        .parse()
        .map_err(|_| Error::Snapshot("bad value for `T`".into()))?;
    let mut coeffs = Vec::with_capacity(n_t * noise.dim());
    for _ in 0..n_t {
        let block = LayeredField::from_coeffs(*grid, read_values(r, 2 * grid.modes())?)?;
        coeffs.extend(noise.coordinates(&block)?);
    }
    ControlPath::from_coeffs(T::lit(t_final), n_t, noise.dim(), coeffs)
}
