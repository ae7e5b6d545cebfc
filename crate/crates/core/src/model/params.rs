use crate::{Error, Result, Scalar};

/// Dimensional inputs from which the layer coupling and Ekman constants follow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalConstants<T> {
    /// Coriolis parameter `f₀` (1/time).
    pub f0: T,
    /// Gravitational acceleration (length/time²).
    pub g: T,
    /// Top and bottom layer depths (length).
    pub h1: T,
    pub h2: T,
    /// Reference, top and bottom densities (mass/length³).
    pub rho0: T,
    pub rho1: T,
    pub rho2: T,
    /// Viscosity (length²/time).
    pub nu: T,
}

impl<T: Scalar> PhysicalConstants<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho2 > self.rho1) {
            return Err(Error::Stratification {
                rho1: self.rho1.to_f64_lossy(),
                rho2: self.rho2.to_f64_lossy(),
            });
        }
        for (name, v) in [
            ("f0", self.f0),
            ("g", self.g),
            ("h1", self.h1),
            ("h2", self.h2),
            ("rho0", self.rho0),
            ("nu", self.nu),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Ekman layer thickness `√(2ν/f₀)`.
    pub fn ekman_thickness(&self) -> T {
        (T::lit(2.0) * self.nu / self.f0).sqrt()
    }
}

/// Parameters of the nondimensional two-layer system.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// Layer coupling constants (1/length²).
    pub f1: T,
    pub f2: T,
    /// Meridional gradient of the Coriolis parameter.
    pub beta: T,
    /// Viscosity.
    pub nu: T,
    /// Ekman friction on the bottom layer.
    pub r: T,
    /// Steady forcing of the top layer as `N·N` sine coefficients.
    pub forcing: Option<Vec<T>>,
    /// Admit `F1 = F2 = 0`, which decouples the layers into two barotropic
    /// vorticity equations with exact linear decay rates.
    pub barotropic_limit: bool,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(f1: T, f2: T, beta: T, nu: T, r: T) -> Self {
        Self {
            f1,
            f2,
            beta,
            nu,
            r,
            forcing: None,
            barotropic_limit: false,
        }
    }

    /// Decoupled layers (`F1 = F2 = 0`) with the test-limit flag set.
    pub fn barotropic(beta: T, nu: T, r: T) -> Self {
        Self {
            barotropic_limit: true,
            ..Self::new(T::zero(), T::zero(), beta, nu, r)
        }
    }

    pub fn with_forcing(mut self, forcing: Vec<T>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        let non_negative = |name: &'static str, v: T| {
            if v >= T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be non-negative, got {v}"),
                })
            }
        };
        if self.barotropic_limit {
            non_negative("F1", self.f1)?;
            non_negative("F2", self.f2)?;
        } else {
            positive("F1", self.f1)?;
            positive("F2", self.f2)?;
        }
        positive("nu", self.nu)?;
        non_negative("r", self.r)?;
        non_negative("beta", self.beta)?;
        if let Some(f) = &self.forcing {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "forcing",
                    reason: "non-finite coefficient".into(),
                });
            }
        }
        Ok(())
    }
}

/// `F_i = f₀² ρ₀ / (g h_i (ρ₂ − ρ₁))`, `r = f₀ δ_E / (2(h₁ + h₂))` with
/// `δ_E = √(2ν/f₀)`. `beta` is not determined by these constants and is left at zero.
pub fn derive_params<T: Scalar>(pc: &PhysicalConstants<T>) -> Result<ModelParams<T>> {
    pc.validate()?;
    let drho = pc.rho2 - pc.rho1;
    let common = pc.f0 * pc.f0 * pc.rho0 / (pc.g * drho);
    let f1 = common / pc.h1;
    let f2 = common / pc.h2;
    let r = pc.f0 * pc.ekman_thickness() / (T::lit(2.0) * (pc.h1 + pc.h2));
    Ok(ModelParams::new(f1, f2, T::zero(), pc.nu, r))
}
