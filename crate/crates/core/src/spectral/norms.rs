use super::LayeredField;
use crate::{Error, Result, Scalar};

fn trapezoid<T: Scalar>(values: &[T], dt: T) -> T {
    let half = T::lit(0.5);
    values
        .windows(2)
        .map(|w| half * dt * (w[0] + w[1]))
        .fold(T::zero(), |a, b| a + b)
}

/// Trajectory norm of `X = C([0,T]; H) ∩ L²(0,T; H¹₀)` with the running
/// supremum of `‖∇q‖²` placed inside the time integral:
/// `{ sup_s ‖q(s)‖² + ∫ sup_{τ≤s} ‖∇q(τ)‖² ds }^{1/2}`.
///
/// `states` are uniform samples with spacing `dt`; the integral is trapezoidal.
pub fn x_norm<T: Scalar>(states: &[LayeredField<T>], dt: T) -> Result<T> {
    let first = states.first().ok_or(Error::EmptyTrajectory)?;
    let mut acc = XNormAccumulator::new(dt);
    for s in states {
        first.ensure_same_grid(s)?;
        acc.push(s);
    }
    acc.value()
}

/// Streaming form of [`x_norm`] for trajectories that are not stored.
#[derive(Clone, Debug)]
pub struct XNormAccumulator<T> {
    dt: T,
    samples: usize,
    sup_l2_sq: T,
    running_grad_sq: T,
    integral: T,
}

impl<T: Scalar> XNormAccumulator<T> {
    pub fn new(dt: T) -> Self {
        Self {
            dt,
            samples: 0,
            sup_l2_sq: T::zero(),
            running_grad_sq: T::zero(),
            integral: T::zero(),
        }
    }

    pub fn push(&mut self, q: &LayeredField<T>) {
        let prev = self.running_grad_sq;
        self.running_grad_sq = prev.max(q.grad_sq());
        if self.samples > 0 {
            self.integral = self.integral + T::lit(0.5) * self.dt * (prev + self.running_grad_sq);
        }
        self.sup_l2_sq = self.sup_l2_sq.max(q.l2_sq());
        self.samples += 1;
    }

    /// `sup ‖q‖²` so far.
    pub fn sup_l2_sq(&self) -> T {
        self.sup_l2_sq
    }

    /// `∫ sup_{τ≤s} ‖∇q(τ)‖² ds` so far.
    pub fn integral(&self) -> T {
        self.integral
    }

    pub fn value_sq(&self) -> Result<T> {
        if self.samples == 0 {
            return Err(Error::EmptyTrajectory);
        }
        Ok(self.sup_l2_sq + self.integral)
    }

    pub fn value(&self) -> Result<T> {
        Ok(self.value_sq()?.sqrt())
    }
}

/// The usual `{ sup_s ‖q(s)‖² + ∫ ‖∇q(s)‖² ds }^{1/2}`.
pub fn x_norm_conventional<T: Scalar>(states: &[LayeredField<T>], dt: T) -> Result<T> {
    let first = states.first().ok_or(Error::EmptyTrajectory)?;
    let mut sup_q = T::zero();
    let mut grads = Vec::with_capacity(states.len());
    for s in states {
        first.ensure_same_grid(s)?;
        sup_q = sup_q.max(s.l2_sq());
        grads.push(s.grad_sq());
    }
    Ok((sup_q + trapezoid(&grads, dt)).sqrt())
}
