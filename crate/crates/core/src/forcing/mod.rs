//! Trace-class Gaussian forcing, the noise intensity `σ`, the Cameron–Martin
//! geometry of `H₀ = Q^{1/2}H`, and stochastic / controlled stepping.
//!
//! `Q` is diagonal in the orthonormal sine basis
//! `e_k = (2/L) sin(jπx/L) sin(kπy/L)` with eigenvalues `c·λ_k^{−s}`, restricted
//! to `m` retained modes per active layer. Noise increments and controls are
//! stored as `2·m` coordinates in that basis (layer-major).

mod rng;

pub use rng::StreamKey;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::Stepper;
use crate::spectral::{Deriv, GridSpec, LayeredField, Spectral};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaKind<T> {
    /// `σ(q)w = w`.
    Additive,
    /// `σ(q)w = (a + b·tanh q)·w` pointwise, layer by layer.
    Multiplicative { a: T, b: T },
}

/// How many `Q`-eigenmodes to retain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ModeCount {
    /// All modes with `λ_k ≤ λ_max / 4`.
    #[default]
    Default,
    Count(usize),
    /// Every grid mode, standing in for the untruncated operator; requires `s > 1`.
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec<T> {
    grid: GridSpec<T>,
    c: T,
    s: T,
    modes: Vec<usize>,
    eigen: Vec<T>,
    kind: SigmaKind<T>,
    tilde: Option<SigmaKind<T>>,
    layers: [bool; 2],
    layer_scale: [T; 2],
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn new(grid: GridSpec<T>, c: T, s: T, count: ModeCount, kind: SigmaKind<T>, layers: [bool; 2]) -> Result<Self> {
        if !(c >= T::zero()) || !c.is_finite() {
            return Err(Error::InvalidParameter {
                name: "noise.c",
                reason: format!("amplitude must be non-negative, got {c}"),
            });
        }
        if !s.is_finite() {
            return Err(Error::InvalidParameter {
                name: "noise.s",
                reason: "decay exponent must be finite".into(),
            });
        }
        validate_kind(&kind)?;
        let mut order: Vec<usize> = (0..grid.modes()).collect();
        let lam = |idx: usize| {
            let (j, k) = grid.mode(idx);
            grid.lambda(j, k)
        };
        order.sort_by(|&a, &b| lam(a).partial_cmp(&lam(b)).expect("finite eigenvalues").then(a.cmp(&b)));
        let m = match count {
            ModeCount::Count(m) => {
                if m == 0 || m > grid.modes() {
                    return Err(Error::InvalidParameter {
                        name: "noise.m",
                        reason: format!("must lie in 1..={}, got {m}", grid.modes()),
                    });
                }
                m
            }
            ModeCount::All => {
                if s <= T::one() {
                    return Err(Error::DivergentTrace { s: s.to_f64_lossy() });
                }
                grid.modes()
            }
            ModeCount::Default => {
                let cap = grid.lambda(grid.n(), grid.n()) / T::lit(4.0);
                order.iter().take_while(|&&i| lam(i) <= cap).count().max(1)
            }
        };
        order.truncate(m);
        let eigen = order.iter().map(|&i| c * lam(i).powf(-s)).collect();
        Ok(Self {
            grid,
            c,
            s,
            modes: order,
            eigen,
            kind,
            tilde: None,
            layers,
            layer_scale: [T::one(), T::one()],
        })
    }

    /// Uses a different intensity `σ̃` in front of the control.
    pub fn with_tilde(mut self, tilde: SigmaKind<T>) -> Result<Self> {
        validate_kind(&tilde)?;
        self.tilde = Some(tilde);
        Ok(self)
    }

    /// Per-layer multipliers of the covariance spectrum.
    pub fn with_layer_scale(mut self, scale: [T; 2]) -> Result<Self> {
        if scale.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "noise.layer_scale",
                reason: "multipliers must be positive".into(),
            });
        }
        self.layer_scale = scale;
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn amplitude(&self) -> T {
        self.c
    }

    pub fn decay(&self) -> T {
        self.s
    }

    /// Retained modes per layer.
    pub fn m(&self) -> usize {
        self.modes.len()
    }

    /// Length of a coordinate vector (`2·m`).
    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }

    /// Flat coefficient indices of the retained modes, by increasing `λ`.
    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn kind(&self) -> SigmaKind<T> {
        self.kind
    }

    pub fn tilde_kind(&self) -> SigmaKind<T> {
        self.tilde.unwrap_or(self.kind)
    }

    pub fn layers(&self) -> [bool; 2] {
        self.layers
    }

    pub fn is_active(&self, layer: usize) -> bool {
        self.layers[layer] && self.c > T::zero()
    }

    /// Eigenvalue of coordinate `(layer, i)`; zero on an inactive layer.
    pub fn eigenvalue(&self, layer: usize, i: usize) -> T {
        if self.is_active(layer) {
            self.layer_scale[layer] * self.eigen[i]
        } else {
            T::zero()
        }
    }

    /// Eigenvalues for all `2·m` coordinates.
    pub fn eigenvalues(&self) -> Vec<T> {
        (0..2)
            .flat_map(|l| (0..self.m()).map(move |i| (l, i)))
            .map(|(l, i)| self.eigenvalue(l, i))
            .collect()
    }

    /// `tr(Q) = Σ q_k` over active layers.
    pub fn trace(&self) -> T {
        self.eigenvalues().into_iter().sum()
    }

    fn basis_scale(&self) -> T {
        T::lit(2.0) / self.grid.length()
    }

    /// Places coordinates on their sine modes: `Σ w_k e_k`.
    pub fn embed(&self, w: &[T]) -> Result<LayeredField<T>> {
        self.check_dim(w)?;
        let s = self.basis_scale();
        let m = self.m();
        let mut f = LayeredField::zeros(self.grid);
        for layer in 0..2 {
            let dst = f.layer_mut(layer);
            for (i, &idx) in self.modes.iter().enumerate() {
                dst[idx] = s * w[layer * m + i];
            }
        }
        Ok(f)
    }

    /// Transpose of [`embed`](Self::embed) on coefficient vectors.
    pub fn embed_t(&self, f: &LayeredField<T>) -> Vec<T> {
        let s = self.basis_scale();
        let mut out = Vec::with_capacity(self.dim());
        for layer in 0..2 {
            let src = f.layer(layer);
            out.extend(self.modes.iter().map(|&idx| s * src[idx]));
        }
        out
    }

    /// Coordinates of a field, rejecting support outside `Q^{1/2}H`.
    pub fn coordinates(&self, f: &LayeredField<T>) -> Result<Vec<T>> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut retained = vec![false; self.grid.modes()];
        for &i in &self.modes {
            retained[i] = true;
        }
        for layer in 0..2 {
            for (idx, &v) in f.layer(layer).iter().enumerate() {
                let inside = retained[idx] && self.is_active(layer);
                if !inside && v != T::zero() {
                    return Err(Error::OutsideCameronMartin { layer, index: idx });
                }
            }
        }
        let inv = T::one() / self.basis_scale();
        Ok(self.embed_t(f).into_iter().map(|v| v * inv * inv).collect())
    }

    fn check_dim(&self, w: &[T]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// `‖h‖₀² = Σ h_k² / q_k`.
    pub fn h0_norm_sq(&self, h: &[T]) -> Result<T> {
        self.check_dim(h)?;
        let m = self.m();
        let mut s = T::zero();
        for (c, &v) in h.iter().enumerate() {
            let (layer, i) = (c / m, c % m);
            let q = self.eigenvalue(layer, i);
            if q > T::zero() {
                s = s + v * v / q;
            } else if v != T::zero() {
                return Err(Error::OutsideCameronMartin { layer, index: self.modes[i] });
            }
        }
        Ok(s)
    }

    pub fn h0_norm(&self, h: &[T]) -> Result<T> {
        Ok(self.h0_norm_sq(h)?.sqrt())
    }

    /// Zeroes coordinates on inactive layers.
    pub fn mask(&self, h: &mut [T]) {
        let m = self.m();
        for layer in 0..2 {
            if !self.is_active(layer) {
                h[layer * m..(layer + 1) * m].iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

fn validate_kind<T: Scalar>(kind: &SigmaKind<T>) -> Result<()> {
    if let SigmaKind::Multiplicative { a, b } = *kind {
        if !(a > T::zero()) || !(b >= T::zero()) || !(a - b > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "noise.a/noise.b",
                reason: format!("need a > 0, b >= 0 and a - b > 0, got a = {a}, b = {b}"),
            });
        }
    }
    Ok(())
}

/// Two-layer Wiener increment in `Q`-eigen coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseIncrement<T> {
    pub dt: T,
    pub coeffs: Vec<T>,
}

/// `ΔW_k = √(q_k dt) ξ_k`, with one standard normal drawn per coordinate in
/// fixed order (inactive coordinates consume a draw and are zeroed).
pub fn sample_increment<T: Scalar, R: Rng + ?Sized>(spec: &NoiseSpec<T>, dt: T, rng: &mut R) -> NoiseIncrement<T> {
    let coeffs = spec
        .eigenvalues()
        .into_iter()
        .map(|q| {
            let xi: f64 = rng.sample(StandardNormal);
            (q * dt).sqrt() * T::lit(xi)
        })
        .collect();
    NoiseIncrement { dt, coeffs }
}

/// Standard normals `ξ_k` only, for callers that scale them differently.
pub fn sample_normals<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<T> {
    (0..dim)
        .map(|_| {
            let xi: f64 = rng.sample(StandardNormal);
            T::lit(xi)
        })
        .collect()
}

/// Pointwise `(a + b·tanh q)·w` on the padded grid for one layer.
pub fn sigma_pointwise<T: Scalar>(spectral: &Spectral<T>, q_layer: &[T], w_layer: &[T], a: T, b: T) -> Vec<T> {
    let gq = spectral.synth(q_layer, Deriv::None);
    let gw = spectral.synth(w_layer, Deriv::None);
    gq.iter().zip(&gw).map(|(&qv, &wv)| (a + b * qv.tanh()) * wv).collect()
}

/// `σ(q) w` as a field.
pub fn apply_sigma<T: Scalar>(
    spectral: &Spectral<T>,
    spec: &NoiseSpec<T>,
    kind: SigmaKind<T>,
    q: &LayeredField<T>,
    w: &[T],
) -> Result<LayeredField<T>> {
    if q.grid() != spec.grid() || spectral.grid() != spec.grid() {
        return Err(Error::GridMismatch);
    }
    let embedded = spec.embed(w)?;
    match kind {
        SigmaKind::Additive => Ok(embedded),
        SigmaKind::Multiplicative { a, b } => {
            let mut out = LayeredField::zeros(*spec.grid());
            for layer in 0..2 {
                if !spec.is_active(layer) {
                    continue;
                }
                let prod = sigma_pointwise(spectral, q.layer(layer), embedded.layer(layer), a, b);
                out.layer_mut(layer).copy_from_slice(&spectral.project(&prod));
            }
            Ok(out)
        }
    }
}

/// Transpose of `w ↦ σ(q)w`, applied to a covariate field `lam`.
pub fn apply_sigma_t<T: Scalar>(
    spectral: &Spectral<T>,
    spec: &NoiseSpec<T>,
    kind: SigmaKind<T>,
    q: &LayeredField<T>,
    lam: &LayeredField<T>,
) -> Vec<T> {
    match kind {
        SigmaKind::Additive => spec.embed_t(lam),
        SigmaKind::Multiplicative { a, b } => {
            let mut pulled = LayeredField::zeros(*spec.grid());
            for layer in 0..2 {
                if !spec.is_active(layer) {
                    continue;
                }
                let gq = spectral.synth(q.layer(layer), Deriv::None);
                let mut g = spectral.project_t(lam.layer(layer));
                for (gv, &qv) in g.iter_mut().zip(&gq) {
                    *gv = *gv * (a + b * qv.tanh());
                }
                pulled.layer_mut(layer).copy_from_slice(&spectral.synth_t(&g, Deriv::None));
            }
            spec.embed_t(&pulled)
        }
    }
}

/// Transpose of the state derivative `δq ↦ ∂_q[σ(q)w]·δq`, applied to `lam`.
pub fn apply_sigma_dq_t<T: Scalar>(
    spectral: &Spectral<T>,
    spec: &NoiseSpec<T>,
    kind: SigmaKind<T>,
    q: &LayeredField<T>,
    w: &[T],
    lam: &LayeredField<T>,
) -> Result<LayeredField<T>> {
    let mut out = LayeredField::zeros(*spec.grid());
    if let SigmaKind::Multiplicative { b, .. } = kind {
        let embedded = spec.embed(w)?;
        for layer in 0..2 {
            if !spec.is_active(layer) {
                continue;
            }
            let gq = spectral.synth(q.layer(layer), Deriv::None);
            let gw = spectral.synth(embedded.layer(layer), Deriv::None);
            let mut g = spectral.project_t(lam.layer(layer));
            for ((gv, &qv), &wv) in g.iter_mut().zip(&gq).zip(&gw) {
                let t = qv.tanh();
                *gv = *gv * b * (T::one() - t * t) * wv;
            }
            out.layer_mut(layer).copy_from_slice(&spectral.synth_t(&g, Deriv::None));
        }
    }
    Ok(out)
}

/// Empirical constants of the growth and Lipschitz conditions on `σ`.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub samples: usize,
    pub trace: f64,
    /// `sup ‖σ(q)‖²_{L_Q} / (1 + ‖q‖²)`.
    pub growth: f64,
    /// `sup ‖σ(q) − σ(q̂)‖²_{L_Q} / ‖q − q̂‖²`.
    pub lipschitz: f64,
    /// `sup ‖σ(q)‖²_{L_Q(H₀;H¹₀)} / (1 + ‖q‖²_{H¹₀})`.
    pub growth_h1: f64,
    /// Per magnitude tier: (field scale, growth sup, lipschitz sup).
    pub tiers: Vec<(f64, f64, f64)>,
    pub growth_flag: bool,
    pub lipschitz_flag: bool,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        !self.growth_flag && !self.lipschitz_flag && self.growth.is_finite() && self.lipschitz.is_finite()
    }
}

const TIER_SCALES: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

/// Samples random fields over magnitude tiers and measures the `L_Q` growth
/// and Lipschitz ratios of `σ`, with `‖S‖²_{L_Q} = tr(S Q S*)` summed over
/// the retained eigenbasis.
pub fn validate_assumptions<T: Scalar>(
    spectral: &Spectral<T>,
    spec: &NoiseSpec<T>,
    kind: SigmaKind<T>,
    samples: usize,
    key: &StreamKey,
) -> Result<AssumptionReport> {
    if samples < 100 {
        return Err(Error::InvalidParameter {
            name: "sample-count",
            reason: format!("need at least 100 samples, got {samples}"),
        });
    }
    let grid = *spec.grid();
    let eig = spec.eigenvalues();
    let dim = spec.dim();
    // σ(q) applied to each unit coordinate, weighted by its eigenvalue.
    let lq_norms = |q: &LayeredField<T>, other: Option<&LayeredField<T>>| -> Result<(T, T)> {
        let mut l2 = T::zero();
        let mut h1 = T::zero();
        let mut unit = vec![T::zero(); dim];
        for c in 0..dim {
            if eig[c] == T::zero() {
                continue;
            }
            unit[c] = T::one();
            let mut col = apply_sigma(spectral, spec, kind, q, &unit)?;
            if let Some(o) = other {
                col.axpy(-T::one(), &apply_sigma(spectral, spec, kind, o, &unit)?)?;
            }
            unit[c] = T::zero();
            l2 = l2 + eig[c] * col.l2_sq();
            h1 = h1 + eig[c] * col.grad_sq();
        }
        Ok((l2, h1))
    };
    let per_tier = samples.div_ceil(TIER_SCALES.len());
    let mut report = AssumptionReport {
        samples: per_tier * TIER_SCALES.len(),
        trace: spec.trace().to_f64_lossy(),
        growth: 0.0,
        lipschitz: 0.0,
        growth_h1: 0.0,
        tiers: Vec::new(),
        growth_flag: false,
        lipschitz_flag: false,
    };
    for (t, &scale) in TIER_SCALES.iter().enumerate() {
        let (mut g_sup, mut l_sup) = (0.0f64, 0.0f64);
        for i in 0..per_tier {
            let mut rng = key.with_trajectory((t * per_tier + i) as u64).rng_at(0);
            let q = random_field(&grid, T::lit(scale), &mut rng);
            let pert = random_field(&grid, T::lit(scale * 0.1), &mut rng);
            let mut qh = q.clone();
            qh.axpy(T::one(), &pert)?;
            let (l2, h1) = lq_norms(&q, None)?;
            let g = (l2 / (T::one() + q.l2_sq())).to_f64_lossy();
            let gh1 = (h1 / (T::one() + q.grad_sq())).to_f64_lossy();
            let (dl2, _) = lq_norms(&q, Some(&qh))?;
            let lip = (dl2 / pert.l2_sq()).to_f64_lossy();
            g_sup = g_sup.max(g);
            l_sup = l_sup.max(lip);
            report.growth_h1 = report.growth_h1.max(gh1);
        }
        report.growth = report.growth.max(g_sup);
        report.lipschitz = report.lipschitz.max(l_sup);
        report.tiers.push((scale, g_sup, l_sup));
    }
    let (first, last) = (report.tiers[0], report.tiers[report.tiers.len() - 1]);
    let grows = |lo: f64, hi: f64| hi > 2.0 * lo + 1e-12;
    report.growth_flag = grows(first.1, last.1);
    report.lipschitz_flag = grows(first.2, last.2);
    Ok(report)
}

/// Random field with `O(scale)` L² norm and `(1+λ)^{-1}`-weighted coefficients.
pub fn random_field<T: Scalar, R: Rng + ?Sized>(grid: &GridSpec<T>, scale: T, rng: &mut R) -> LayeredField<T> {
    let mut f = LayeredField::zeros(*grid);
    let n = grid.n();
    for (c, v) in f.coeffs_mut().iter_mut().enumerate() {
        let idx = c % (n * n);
        let (j, k) = (idx / n + 1, idx % n + 1);
        let xi: f64 = rng.sample(StandardNormal);
        *v = T::lit(xi) / (T::one() + grid.lambda(j, k));
    }
    let norm = f.l2();
    if norm > T::zero() {
        f.scaled(scale / norm)
    } else {
        f
    }
}

/// Euler–Maruyama and controlled steps on top of the deterministic IMEX stepper.
#[derive(Clone, Debug)]
pub struct StochasticStepper<'m, T: Scalar> {
    stepper: Stepper<'m, T>,
    noise: &'m NoiseSpec<T>,
}

impl<'m, T: Scalar> StochasticStepper<'m, T> {
    pub fn new(stepper: Stepper<'m, T>, noise: &'m NoiseSpec<T>) -> Result<Self> {
        if stepper.model().grid() != noise.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { stepper, noise })
    }

    pub fn dt(&self) -> T {
        self.stepper.dt()
    }

    pub fn noise(&self) -> &NoiseSpec<T> {
        self.noise
    }

    pub fn deterministic(&self) -> &Stepper<'m, T> {
        &self.stepper
    }

    /// `q + dt·(drift) + √ε σ(q)ΔW`, implicit in the linear part.
    pub fn step_em(&self, q: &LayeredField<T>, eps: T, inc: &NoiseIncrement<T>) -> Result<LayeredField<T>> {
        self.step_controlled(q, None, eps, inc)
    }

    /// [`step_em`](Self::step_em) plus the control drift `dt·σ̃(q)h`.
    pub fn step_controlled(
        &self,
        q: &LayeredField<T>,
        h: Option<&[T]>,
        eps: T,
        inc: &NoiseIncrement<T>,
    ) -> Result<LayeredField<T>> {
        if !(eps >= T::zero()) {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: format!("must be non-negative, got {eps}"),
            });
        }
        let spectral = self.stepper.model().spectral();
        let noisy = eps > T::zero() && inc.coeffs.iter().any(|&v| v != T::zero());
        let controlled = h.is_some_and(|h| h.iter().any(|&v| v != T::zero()));
        if !noisy && !controlled {
            return self.stepper.step(q);
        }
        let mut extra = LayeredField::zeros(*q.grid());
        if noisy {
            let s = apply_sigma(spectral, self.noise, self.noise.kind(), q, &inc.coeffs)?;
            extra.axpy(eps.sqrt(), &s)?;
        }
        if let Some(h) = h.filter(|_| controlled) {
            let s = apply_sigma(spectral, self.noise, self.noise.tilde_kind(), q, h)?;
            extra.axpy(self.dt(), &s)?;
        }
        let next = self.stepper.step_with(q, Some(&extra))?;
        Ok(next)
    }

    /// Draws the increment for `step` from `key` and applies [`step_controlled`](Self::step_controlled).
    pub fn step_keyed(
        &self,
        q: &LayeredField<T>,
        h: Option<&[T]>,
        eps: T,
        key: &StreamKey,
        step: u64,
    ) -> Result<LayeredField<T>> {
        let inc = sample_increment(self.noise, self.dt(), &mut key.rng_at(step));
        self.step_controlled(q, h, eps, &inc)
    }
}
