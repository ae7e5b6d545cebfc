//! Deterministic two-layer dynamics: potential-vorticity inversion, tendency
//! assembly and semi-implicit time stepping.
//!
//! Per mode `k` the stream function solves
//! `[[−λ−F1, F1], [F2, −λ−F2]] ψ = q`. Dissipation and Ekman drag are
//! diagonal in the sine basis and are advanced implicitly through an exact
//! 2×2 solve per mode. The Jacobian, the β-term and the forcing are explicit;
//! `∂/∂x` couples modes of opposite parity and is applied as a Galerkin matrix.

mod params;

pub use params::{derive_params, ModelParams, PhysicalConstants};

use crate::spectral::{x_norm, Deriv, GridSpec, LayeredField, Spectral};
use crate::{Error, Result, Scalar};

/// Row-major 2×2 block `[[a, b], [c, d]]`.
pub type Block<T> = [T; 4];

#[inline]
pub fn block_apply<T: Scalar>(m: &Block<T>, x: T, y: T) -> (T, T) {
    (m[0] * x + m[1] * y, m[2] * x + m[3] * y)
}

#[inline]
pub fn block_apply_t<T: Scalar>(m: &Block<T>, x: T, y: T) -> (T, T) {
    (m[0] * x + m[2] * y, m[1] * x + m[3] * y)
}

fn block_inverse<T: Scalar>(m: &Block<T>) -> Block<T> {
    let det = m[0] * m[3] - m[1] * m[2];
    [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]
}

fn block_mul<T: Scalar>(a: &Block<T>, b: &Block<T>) -> Block<T> {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Applies per-mode blocks to a field, coupling the layers mode by mode.
pub fn apply_blocks<T: Scalar>(blocks: &[Block<T>], f: &LayeredField<T>, transpose: bool) -> LayeredField<T> {
    let m = f.grid().modes();
    let (top, bottom) = f.coeffs().split_at(m);
    let mut out = LayeredField::zeros(*f.grid());
    let coeffs = out.coeffs_mut();
    for (idx, b) in blocks.iter().enumerate() {
        let (x, y) = if transpose {
            block_apply_t(b, top[idx], bottom[idx])
        } else {
            block_apply(b, top[idx], bottom[idx])
        };
        coeffs[idx] = x;
        coeffs[m + idx] = y;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Backward Euler on the linear part, forward Euler on the rest.
    #[default]
    Imex1,
    /// Crank–Nicolson on the linear part with a Heun predictor-corrector for
    /// the explicit terms.
    Imex2,
}

/// Uniformly sampled states `q(i·dt)`, `i = 0..states.len()`.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub dt: T,
    pub states: Vec<LayeredField<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_state(&self) -> &LayeredField<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.states.len()).map(|i| T::from_usize_exact(i) * self.dt)
    }

    pub fn x_norm(&self) -> Result<T> {
        x_norm(&self.states, self.dt)
    }
}

#[derive(Clone, Debug)]
pub struct QgModel<T: Scalar> {
    spectral: Spectral<T>,
    params: ModelParams<T>,
    nonlinear: bool,
    inversion: Vec<Block<T>>,
    linear: Vec<Block<T>>,
}

impl<T: Scalar> QgModel<T> {
    pub fn new(spectral: Spectral<T>, params: ModelParams<T>) -> Result<Self> {
        params.validate()?;
        let grid = *spectral.grid();
        if let Some(f) = &params.forcing {
            if f.len() != grid.modes() {
                return Err(Error::DimensionMismatch {
                    expected: grid.modes(),
                    got: f.len(),
                });
            }
        }
        let (f1, f2) = (params.f1, params.f2);
        let mut inversion = Vec::with_capacity(grid.modes());
        let mut linear = Vec::with_capacity(grid.modes());
        for &lam in spectral.lambda() {
            let det = lam * lam + lam * (f1 + f2);
            let inv = [(-lam - f2) / det, -f1 / det, -f2 / det, (-lam - f1) / det];
            let d1 = params.nu * lam * lam;
            let d2 = d1 + params.r * lam;
            linear.push([d1 * inv[0], d1 * inv[1], d2 * inv[2], d2 * inv[3]]);
            inversion.push(inv);
        }
        Ok(Self {
            spectral,
            params,
            nonlinear: true,
            inversion,
            linear,
        })
    }

    pub fn from_grid(grid: GridSpec<T>, params: ModelParams<T>) -> Result<Self> {
        Self::new(Spectral::new(grid), params)
    }

    /// Switches the Jacobian advection on or off (linear-only configuration).
    pub fn with_nonlinear(mut self, on: bool) -> Self {
        self.nonlinear = on;
        self
    }

    pub fn nonlinear(&self) -> bool {
        self.nonlinear
    }

    pub fn spectral(&self) -> &Spectral<T> {
        &self.spectral
    }

    pub fn grid(&self) -> &GridSpec<T> {
        self.spectral.grid()
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// `ψ = M_k⁻¹ q` per mode.
    pub fn inversion_blocks(&self) -> &[Block<T>] {
        &self.inversion
    }

    /// Linear tendency blocks `L_k` acting on `q`.
    pub fn linear_blocks(&self) -> &[Block<T>] {
        &self.linear
    }

    fn check(&self, q: &LayeredField<T>) -> Result<()> {
        if q.grid() != self.grid() {
            Err(Error::GridMismatch)
        } else {
            Ok(())
        }
    }

    /// Stream functions from potential vorticity.
    pub fn invert_pv(&self, q: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.check(q)?;
        Ok(apply_blocks(&self.inversion, q, false))
    }

    /// `q_i = Δψ_i − F_i(ψ_i − ψ_j)`.
    pub fn pv_from_psi(&self, psi: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.check(psi)?;
        let m = self.grid().modes();
        let (f1, f2) = (self.params.f1, self.params.f2);
        let mut q = LayeredField::zeros(*self.grid());
        let (p1, p2) = psi.coeffs().split_at(m);
        let coeffs = q.coeffs_mut();
        for (idx, &lam) in self.spectral.lambda().iter().enumerate() {
            coeffs[idx] = -lam * p1[idx] - f1 * (p1[idx] - p2[idx]);
            coeffs[m + idx] = -lam * p2[idx] - f2 * (p2[idx] - p1[idx]);
        }
        Ok(q)
    }

    /// Terms advanced explicitly: `−J(ψ_i, q_i) − β ∂ψ_i/∂x`, plus `f` on the top layer.
    pub fn explicit_tendency(&self, q: &LayeredField<T>) -> Result<LayeredField<T>> {
        let psi = self.invert_pv(q)?;
        self.explicit_with_psi(q, &psi)
    }

    fn explicit_with_psi(&self, q: &LayeredField<T>, psi: &LayeredField<T>) -> Result<LayeredField<T>> {
        let m = self.grid().modes();
        let mut out = LayeredField::zeros(*self.grid());
        for layer in 0..2 {
            let dst = &mut out.coeffs_mut()[layer * m..(layer + 1) * m];
            if self.nonlinear {
                let j = self.spectral.jacobian(psi.layer(layer), q.layer(layer))?;
                for (o, v) in dst.iter_mut().zip(j) {
                    *o = -v;
                }
            }
            if self.params.beta != T::zero() {
                let dx = self.spectral.ddx(psi.layer(layer));
                for (o, v) in dst.iter_mut().zip(dx) {
                    *o = *o - self.params.beta * v;
                }
            }
        }
        if let Some(f) = &self.params.forcing {
            for (o, &v) in out.layer_mut(0).iter_mut().zip(f) {
                *o = *o + v;
            }
        }
        Ok(out)
    }

    /// Transpose of the linearized explicit tendency at `q`, applied to `mu`.
    pub fn explicit_tendency_adjoint(&self, q: &LayeredField<T>, mu: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.check(mu)?;
        let psi = self.invert_pv(q)?;
        let mut dq = LayeredField::zeros(*self.grid());
        let mut dpsi = LayeredField::zeros(*self.grid());
        let s = &self.spectral;
        for layer in 0..2 {
            if self.nonlinear {
                let g = s.project_t(mu.layer(layer));
                let (px, py) = (s.synth(psi.layer(layer), Deriv::X), s.synth(psi.layer(layer), Deriv::Y));
                let (qx, qy) = (s.synth(q.layer(layer), Deriv::X), s.synth(q.layer(layer), Deriv::Y));
                let times = |a: &[T]| -> Vec<T> { g.iter().zip(a).map(|(&x, &y)| x * y).collect() };
                // J(ψ, q) = ψ_x q_y − ψ_y q_x, differentiated in q and in ψ.
                let wrt_q_y = s.synth_t(&times(&px), Deriv::Y);
                let wrt_q_x = s.synth_t(&times(&py), Deriv::X);
                let wrt_p_x = s.synth_t(&times(&qy), Deriv::X);
                let wrt_p_y = s.synth_t(&times(&qx), Deriv::Y);
                for (i, o) in dq.layer_mut(layer).iter_mut().enumerate() {
                    *o = wrt_q_x[i] - wrt_q_y[i];
                }
                for (i, o) in dpsi.layer_mut(layer).iter_mut().enumerate() {
                    *o = wrt_p_y[i] - wrt_p_x[i];
                }
            }
            if self.params.beta != T::zero() {
                let dx = s.ddx_t(mu.layer(layer));
                for (o, v) in dpsi.layer_mut(layer).iter_mut().zip(dx) {
                    *o = *o - self.params.beta * v;
                }
            }
        }
        dq.axpy(T::one(), &apply_blocks(&self.inversion, &dpsi, true))?;
        Ok(dq)
    }

    /// `L q`: `νΔ²ψ₁` on top, `νΔ²ψ₂ − rΔψ₂` on the bottom layer.
    pub fn linear_tendency(&self, q: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.check(q)?;
        Ok(apply_blocks(&self.linear, q, false))
    }

    /// Full right-hand side `dq/dt`.
    pub fn tendency(&self, q: &LayeredField<T>) -> Result<LayeredField<T>> {
        let mut out = self.explicit_tendency(q)?;
        out.axpy(T::one(), &self.linear_tendency(q)?)?;
        Ok(out)
    }

    /// Advective step limit `0.5·Δx / max|∇ψ|`; `None` for a state at rest.
    pub fn suggest_dt(&self, q: &LayeredField<T>) -> Result<Option<T>> {
        let psi = self.invert_pv(q)?;
        let mut umax = T::zero();
        for layer in 0..2 {
            let px = self.spectral.synth(psi.layer(layer), Deriv::X);
            let py = self.spectral.synth(psi.layer(layer), Deriv::Y);
            for (&a, &b) in px.iter().zip(&py) {
                umax = umax.max((a * a + b * b).sqrt());
            }
        }
        if umax > T::zero() {
            Ok(Some(T::lit(0.5) * self.grid().spacing() / umax))
        } else {
            Ok(None)
        }
    }

    pub fn stepper(&self, dt: T, scheme: Scheme) -> Result<Stepper<'_, T>> {
        Stepper::new(self, dt, scheme)
    }

    /// Integrates over `[0, t_final]` with `round(t_final/dt)` equal steps.
    pub fn integrate(&self, q0: &LayeredField<T>, t_final: T, dt: T, scheme: Scheme) -> Result<Trajectory<T>> {
        self.check(q0)?;
        let steps = step_count(t_final, dt)?;
        let dt = t_final / T::from_usize_exact(steps);
        let stepper = self.stepper(dt, scheme)?;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(q0.clone());
        for i in 0..steps {
            let next = stepper.step(states.last().expect("non-empty"))?;
            if !next.is_finite() {
                return Err(Error::NonFinite { step: i + 1 });
            }
            states.push(next);
        }
        Ok(Trajectory { dt, states })
    }
}

/// Number of equal steps covering `[0, t_final]` at roughly `dt`.
pub fn step_count<T: Scalar>(t_final: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    if !(t_final > T::zero()) || !t_final.is_finite() {
        return Err(Error::InvalidParameter {
            name: "T",
            reason: format!("horizon must be positive, got {t_final}"),
        });
    }
    Ok((t_final / dt).round().to_usize().unwrap_or(0).max(1))
}

/// Fixed-step integrator with the implicit per-mode solves factored once.
#[derive(Clone, Debug)]
pub struct Stepper<'m, T: Scalar> {
    model: &'m QgModel<T>,
    dt: T,
    scheme: Scheme,
    /// `(I − θ dt L_k)⁻¹` with `θ = 1` (Imex1) or `1/2` (Imex2).
    implicit: Vec<Block<T>>,
    /// `I + dt/2 L_k` (Imex2 only).
    explicit_half: Vec<Block<T>>,
    /// `(I − dt L_k)⁻¹` for the Imex2 predictor.
    predictor: Vec<Block<T>>,
}

impl<'m, T: Scalar> Stepper<'m, T> {
    pub fn new(model: &'m QgModel<T>, dt: T, scheme: Scheme) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            });
        }
        let theta = match scheme {
            Scheme::Imex1 => T::one(),
            Scheme::Imex2 => T::lit(0.5),
        };
        let solve = |s: T| -> Vec<Block<T>> {
            model
                .linear
                .iter()
                .map(|l| block_inverse(&[T::one() - s * l[0], -s * l[1], -s * l[2], T::one() - s * l[3]]))
                .collect()
        };
        let implicit = solve(theta * dt);
        let (explicit_half, predictor) = match scheme {
            Scheme::Imex1 => (Vec::new(), Vec::new()),
            Scheme::Imex2 => {
                let h = T::lit(0.5) * dt;
                let half = model
                    .linear
                    .iter()
                    .map(|l| [T::one() + h * l[0], h * l[1], h * l[2], T::one() + h * l[3]])
                    .collect();
                (half, solve(dt))
            }
        };
        Ok(Self {
            model,
            dt,
            scheme,
            implicit,
            explicit_half,
            predictor,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn model(&self) -> &'m QgModel<T> {
        self.model
    }

    /// `(I − dt L_k)⁻¹` blocks (first-order scheme).
    pub fn implicit_blocks(&self) -> &[Block<T>] {
        &self.implicit
    }

    pub fn step(&self, q: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.step_with(q, None)
    }

    /// One step with an additional explicit increment (already multiplied by
    /// its time factor) folded in before the implicit solve.
    pub fn step_with(&self, q: &LayeredField<T>, increment: Option<&LayeredField<T>>) -> Result<LayeredField<T>> {
        self.model.check(q)?;
        match self.scheme {
            Scheme::Imex1 => {
                let mut rhs = q.clone();
                rhs.axpy(self.dt, &self.model.explicit_tendency(q)?)?;
                if let Some(inc) = increment {
                    rhs.axpy(T::one(), inc)?;
                }
                Ok(apply_blocks(&self.implicit, &rhs, false))
            }
            Scheme::Imex2 => {
                let e0 = self.model.explicit_tendency(q)?;
                let mut pred = q.clone();
                pred.axpy(self.dt, &e0)?;
                if let Some(inc) = increment {
                    pred.axpy(T::one(), inc)?;
                }
                let pred = apply_blocks(&self.predictor, &pred, false);
                let e1 = self.model.explicit_tendency(&pred)?;
                let mut rhs = apply_blocks(&self.explicit_half, q, false);
                let h = T::lit(0.5) * self.dt;
                rhs.axpy(h, &e0)?;
                rhs.axpy(h, &e1)?;
                if let Some(inc) = increment {
                    rhs.axpy(T::one(), inc)?;
                }
                Ok(apply_blocks(&self.implicit, &rhs, false))
            }
        }
    }
}

/// Composes two 2×2 blocks; exposed for adjoint and oracle code.
pub fn compose<T: Scalar>(a: &Block<T>, b: &Block<T>) -> Block<T> {
    block_mul(a, b)
}
