use super::trig::{Backend, Kind, TrigSums};
use super::{GridSpec, LayeredField};
use crate::{Error, Result, Scalar};

/// First-derivative selector for padded-grid synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deriv {
    None,
    X,
    Y,
}

impl Deriv {
    fn kinds(self) -> (Kind, Kind) {
        match self {
            Deriv::None => (Kind::Sin, Kind::Sin),
            Deriv::X => (Kind::Cos, Kind::Sin),
            Deriv::Y => (Kind::Sin, Kind::Cos),
        }
    }
}

/// Transform plans and per-mode tables for one [`GridSpec`].
///
/// Single-layer routines take `N·N` coefficient slices; padded-grid routines
/// work on the `(P-1)²` interior nodes of the dealiasing grid, with `P` from
/// [`GridSpec::padded_period`].
#[derive(Clone, Debug)]
pub struct Spectral<T: Scalar> {
    grid: GridSpec<T>,
    base: TrigSums<T>,
    padded: TrigSums<T>,
    lambda: Vec<T>,
    wavenumber: Vec<T>,
    ddx: Vec<T>,
}

impl<T: Scalar> Spectral<T> {
    pub fn new(grid: GridSpec<T>) -> Self {
        Self::build(grid, None)
    }

    /// Forces the dense or FFT path for every transform.
    pub fn with_backend(grid: GridSpec<T>, backend: Backend) -> Self {
        Self::build(grid, Some(backend))
    }

    fn build(grid: GridSpec<T>, backend: Option<Backend>) -> Self {
        let n = grid.n();
        let l = grid.length();
        let lambda = (0..grid.modes())
            .map(|idx| {
                let (j, k) = grid.mode(idx);
                grid.lambda(j, k)
            })
            .collect();
        let wavenumber = (1..=n).map(|j| T::from_usize_exact(j) * T::PI() / l).collect();
        // Galerkin matrix of ∂/∂x in the sine basis: ∂x sin(jπx/L) projects onto
        // sin(mπx/L) with weight 4jm / (L(m² - j²)) when m + j is odd.
        let mut ddx = vec![T::zero(); n * n];
        for m in 1..=n {
            for j in 1..=n {
                if (m + j) % 2 == 1 {
                    let num = T::from_usize_exact(4 * j * m);
                    let den = T::lit((m * m) as f64 - (j * j) as f64) * l;
                    ddx[(m - 1) * n + (j - 1)] = num / den;
                }
            }
        }
        Self {
            base: TrigSums::new(n + 1, backend),
            padded: TrigSums::new(grid.padded_period(), backend),
            grid,
            lambda,
            wavenumber,
            ddx,
        }
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    /// `λ_k` per flat mode index.
    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }

    /// Nodes per direction on the padded grid.
    pub fn padded_points(&self) -> usize {
        self.grid.padded_period() - 1
    }

    pub fn padded_nodes(&self) -> Vec<T> {
        let p = self.grid.padded_period();
        let h = self.grid.length() / T::from_usize_exact(p);
        (1..p).map(|i| T::from_usize_exact(i) * h).collect()
    }

    fn check_layer(&self, s: &[T]) -> Result<()> {
        if s.len() != self.grid.modes() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.modes(),
                got: s.len(),
            });
        }
        Ok(())
    }

    fn check_field(&self, f: &LayeredField<T>) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Nodal values on the `N × N` collocation grid to sine coefficients.
    pub fn forward(&self, values: &[T]) -> Result<Vec<T>> {
        self.check_layer(values)?;
        let n = self.grid.n();
        let scale = T::lit(2.0) / T::from_usize_exact(n + 1);
        let mut out = self.base.apply_2d(values, n, n, Kind::Sin, Kind::Sin, n, n);
        out.iter_mut().for_each(|c| *c = *c * scale * scale);
        Ok(out)
    }

    /// Sine coefficients to nodal values on the `N × N` collocation grid.
    pub fn inverse(&self, coeffs: &[T]) -> Result<Vec<T>> {
        self.check_layer(coeffs)?;
        let n = self.grid.n();
        Ok(self.base.apply_2d(coeffs, n, n, Kind::Sin, Kind::Sin, n, n))
    }

    /// Both layers of nodal values (layer-major) to a field.
    pub fn forward_field(&self, values: &[T]) -> Result<LayeredField<T>> {
        let m = self.grid.modes();
        if values.len() != 2 * m {
            return Err(Error::DimensionMismatch {
                expected: 2 * m,
                got: values.len(),
            });
        }
        let top = self.forward(&values[..m])?;
        let bottom = self.forward(&values[m..])?;
        LayeredField::from_layers(self.grid, &top, &bottom)
    }

    pub fn inverse_field(&self, f: &LayeredField<T>) -> Result<Vec<T>> {
        self.check_field(f)?;
        let mut out = self.inverse(f.layer(0))?;
        out.extend(self.inverse(f.layer(1))?);
        Ok(out)
    }

    pub fn laplacian_layer(&self, coeffs: &[T]) -> Vec<T> {
        coeffs.iter().zip(&self.lambda).map(|(&a, &l)| -l * a).collect()
    }

    pub fn laplacian(&self, f: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.check_field(f)?;
        let top = self.laplacian_layer(f.layer(0));
        let bottom = self.laplacian_layer(f.layer(1));
        LayeredField::from_layers(self.grid, &top, &bottom)
    }

    fn deriv_scale(&self, deriv: Deriv, coeffs: &[T]) -> Vec<T> {
        let n = self.grid.n();
        match deriv {
            Deriv::None => coeffs.to_vec(),
            Deriv::X => coeffs
                .iter()
                .enumerate()
                .map(|(i, &a)| a * self.wavenumber[i / n])
                .collect(),
            Deriv::Y => coeffs
                .iter()
                .enumerate()
                .map(|(i, &a)| a * self.wavenumber[i % n])
                .collect(),
        }
    }

    /// Evaluates `u`, `∂u/∂x` or `∂u/∂y` on the padded interior grid.
    pub fn synth(&self, coeffs: &[T], deriv: Deriv) -> Vec<T> {
        let n = self.grid.n();
        let m = self.padded_points();
        let (kx, ky) = deriv.kinds();
        let scaled = self.deriv_scale(deriv, coeffs);
        self.padded.apply_2d(&scaled, n, n, kx, ky, m, m)
    }

    /// Adjoint of [`synth`](Self::synth) under the Euclidean inner products.
    pub fn synth_t(&self, values: &[T], deriv: Deriv) -> Vec<T> {
        let n = self.grid.n();
        let m = self.padded_points();
        let (kx, ky) = deriv.kinds();
        let raw = self.padded.apply_2d(values, m, m, kx, ky, n, n);
        self.deriv_scale(deriv, &raw)
    }

    /// Discrete sine projection of padded nodal values onto the retained modes.
    pub fn project(&self, values: &[T]) -> Vec<T> {
        let s = self.projection_scale();
        let mut out = self.synth_t(values, Deriv::None);
        out.iter_mut().for_each(|c| *c = *c * s);
        out
    }

    /// Adjoint of [`project`](Self::project).
    pub fn project_t(&self, coeffs: &[T]) -> Vec<T> {
        let s = self.projection_scale();
        let mut out = self.synth(coeffs, Deriv::None);
        out.iter_mut().for_each(|c| *c = *c * s);
        out
    }

    fn projection_scale(&self) -> T {
        let two_over_p = T::lit(2.0) / T::from_usize_exact(self.grid.padded_period());
        two_over_p * two_over_p
    }

    /// Dealiased `J(u, v) = u_x v_y − u_y v_x` for single layers.
    pub fn jacobian(&self, u: &[T], v: &[T]) -> Result<Vec<T>> {
        self.check_layer(u)?;
        self.check_layer(v)?;
        let ux = self.synth(u, Deriv::X);
        let uy = self.synth(u, Deriv::Y);
        let vx = self.synth(v, Deriv::X);
        let vy = self.synth(v, Deriv::Y);
        let prod: Vec<T> = ux
            .iter()
            .zip(&vy)
            .zip(uy.iter().zip(&vx))
            .map(|((&a, &b), (&c, &d))| a * b - c * d)
            .collect();
        Ok(self.project(&prod))
    }

    /// Layer-wise Jacobian of two fields.
    pub fn jacobian_field(&self, u: &LayeredField<T>, v: &LayeredField<T>) -> Result<LayeredField<T>> {
        self.check_field(u)?;
        self.check_field(v)?;
        let top = self.jacobian(u.layer(0), v.layer(0))?;
        let bottom = self.jacobian(u.layer(1), v.layer(1))?;
        LayeredField::from_layers(self.grid, &top, &bottom)
    }

    /// Sine-Galerkin projection of `∂u/∂x`.
    pub fn ddx(&self, coeffs: &[T]) -> Vec<T> {
        self.apply_ddx(coeffs, false)
    }

    /// Transpose of [`ddx`](Self::ddx).
    pub fn ddx_t(&self, coeffs: &[T]) -> Vec<T> {
        self.apply_ddx(coeffs, true)
    }

    fn apply_ddx(&self, coeffs: &[T], transpose: bool) -> Vec<T> {
        let n = self.grid.n();
        let mut out = vec![T::zero(); n * n];
        for m in 0..n {
            for j in 0..n {
                let d = if transpose {
                    self.ddx[j * n + m]
                } else {
                    self.ddx[m * n + j]
                };
                if d == T::zero() {
                    continue;
                }
                let src = &coeffs[j * n..(j + 1) * n];
                let dst = &mut out[m * n..(m + 1) * n];
                for (o, &a) in dst.iter_mut().zip(src) {
                    *o = *o + d * a;
                }
            }
        }
        out
    }

    /// Direct evaluation of a single layer at an arbitrary point.
    pub fn eval_point(&self, coeffs: &[T], x: T, y: T) -> T {
        let n = self.grid.n();
        let sx: Vec<T> = self.wavenumber.iter().map(|&w| (w * x).sin()).collect();
        let sy: Vec<T> = self.wavenumber.iter().map(|&w| (w * y).sin()).collect();
        let mut s = T::zero();
        for j in 0..n {
            let row = &coeffs[j * n..(j + 1) * n];
            let inner: T = row.iter().zip(&sy).map(|(&a, &b)| a * b).sum();
            s = s + sx[j] * inner;
        }
        s
    }
}
