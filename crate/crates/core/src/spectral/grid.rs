use crate::{Error, Result, Scalar};

/// Rational padding ratio for pseudo-spectral products.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dealias {
    pub num: u32,
    pub den: u32,
}

impl Dealias {
    pub const NONE: Dealias = Dealias { num: 1, den: 1 };
    pub const THREE_HALVES: Dealias = Dealias { num: 3, den: 2 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num < den {
            return Err(Error::InvalidParameter {
                name: "dealias_factor",
                reason: format!("{num}/{den} must be a ratio >= 1"),
            });
        }
        Ok(Self { num, den })
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::str::FromStr for Dealias {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter {
            name: "dealias_factor",
            reason: format!("cannot parse `{s}` as a ratio like 3/2"),
        };
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Dealias::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

impl std::fmt::Display for Dealias {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Square domain side, modes per direction and dealiasing ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec<T> {
    n: usize,
    length: T,
    dealias: Dealias,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(n: usize, length: T, dealias: Dealias) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter {
                name: "N",
                reason: format!("need at least 2 modes per direction, got {n}"),
            });
        }
        if !(length > T::zero()) || !length.is_finite() {
            return Err(Error::InvalidParameter {
                name: "L",
                reason: format!("domain length must be positive and finite, got {length}"),
            });
        }
        Ok(Self { n, length, dealias })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> T {
        self.length
    }

    pub fn dealias(&self) -> Dealias {
        self.dealias
    }

    /// Coefficients per layer.
    pub fn modes(&self) -> usize {
        self.n * self.n
    }

    /// Collocation spacing `L/(N+1)`.
    pub fn spacing(&self) -> T {
        self.length / T::from_usize_exact(self.n + 1)
    }

    /// Period `P` of the padded product grid; its interior has `P - 1` nodes per direction.
    pub fn padded_period(&self) -> usize {
        let base = (self.n + 1) as u64;
        let num = self.dealias.num as u64 * base;
        let den = self.dealias.den as u64;
        (num.div_ceil(den) as usize).max(self.n + 1)
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        debug_assert!((1..=self.n).contains(&j) && (1..=self.n).contains(&k));
        (j - 1) * self.n + (k - 1)
    }

    /// Inverse of [`index`](Self::index).
    #[inline]
    pub fn mode(&self, idx: usize) -> (usize, usize) {
        (idx / self.n + 1, idx % self.n + 1)
    }

    /// Dirichlet Laplacian eigenvalue `π²(j² + k²)/L²`.
    pub fn lambda(&self, j: usize, k: usize) -> T {
        let pi = T::PI();
        let jj = T::from_usize_exact(j * j + k * k);
        pi * pi * jj / (self.length * self.length)
    }

    /// Parseval constant: `‖Σ a_jk sin sin‖² = (L²/4) Σ a_jk²`.
    pub fn parseval(&self) -> T {
        self.length * self.length / T::lit(4.0)
    }

    /// Interior collocation nodes `iL/(N+1)`, `i = 1..=N`.
    pub fn nodes(&self) -> Vec<T> {
        (1..=self.n)
            .map(|i| T::from_usize_exact(i) * self.spacing())
            .collect()
    }
}

/// Two layers of sine coefficients sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredField<T> {
    grid: GridSpec<T>,
    coeffs: Vec<T>,
}

impl<T: Scalar> LayeredField<T> {
    pub fn zeros(grid: GridSpec<T>) -> Self {
        Self {
            coeffs: vec![T::zero(); 2 * grid.modes()],
            grid,
        }
    }

    /// Wraps `2·N·N` coefficients in layer-major, row-major order.
    pub fn from_coeffs(grid: GridSpec<T>, coeffs: Vec<T>) -> Result<Self> {
        let expected = 2 * grid.modes();
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn from_layers(grid: GridSpec<T>, top: &[T], bottom: &[T]) -> Result<Self> {
        let m = grid.modes();
        for layer in [top, bottom] {
            if layer.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: layer.len(),
                });
            }
        }
        let mut coeffs = Vec::with_capacity(2 * m);
        coeffs.extend_from_slice(top);
        coeffs.extend_from_slice(bottom);
        Ok(Self { grid, coeffs })
    }

    /// A single sine mode `amp·sin(jπx/L)sin(kπy/L)` on one layer.
    pub fn single_mode(grid: GridSpec<T>, layer: usize, j: usize, k: usize, amp: T) -> Self {
        let mut f = Self::zeros(grid);
        let idx = grid.index(j, k);
        f.layer_mut(layer)[idx] = amp;
        f
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    pub fn layer(&self, layer: usize) -> &[T] {
        let m = self.grid.modes();
        &self.coeffs[layer * m..(layer + 1) * m]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [T] {
        let m = self.grid.modes();
        &mut self.coeffs[layer * m..(layer + 1) * m]
    }

    pub fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: T, other: &Self) -> Result<()> {
        self.ensure_same_grid(other)?;
        for (x, &y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x = *x + a * y;
        }
        Ok(())
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|&c| a * c).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-T::one(), other)?;
        Ok(out)
    }

    /// `(u, v)` in `L²(D)²`, evaluated by Parseval.
    pub fn inner_product(&self, other: &Self) -> Result<T> {
        self.ensure_same_grid(other)?;
        let s: T = self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a * b).sum();
        Ok(self.grid.parseval() * s)
    }

    fn weighted_sq(&self, power: i32) -> T {
        let n = self.grid.n;
        let mut s = T::zero();
        for layer in 0..2 {
            for (idx, &a) in self.layer(layer).iter().enumerate() {
                let lam = self.grid.lambda(idx / n + 1, idx % n + 1);
                s = s + lam.powi(power) * a * a;
            }
        }
        self.grid.parseval() * s
    }

    pub fn l2_sq(&self) -> T {
        self.weighted_sq(0)
    }

    pub fn l2(&self) -> T {
        self.l2_sq().sqrt()
    }

    /// `‖∇u‖²` (weights `λ_k`).
    pub fn grad_sq(&self) -> T {
        self.weighted_sq(1)
    }

    pub fn grad_norm(&self) -> T {
        self.grad_sq().sqrt()
    }

    /// `‖Δu‖²` (weights `λ_k²`), equivalent to the `H²` norm on `H² ∩ H¹₀`.
    pub fn h2_sq(&self) -> T {
        self.weighted_sq(2)
    }

    pub fn h2_norm(&self) -> T {
        self.h2_sq().sqrt()
    }
}
