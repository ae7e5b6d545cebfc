//! Batched trigonometric sums `Σ_j x_j cos(π j i / P)` and `Σ_j x_j sin(π j i / P)`.
//!
//! Every sine/cosine synthesis and analysis on the interior collocation grid
//! reduces to this one primitive: the kernel is symmetric in `(i, j)`, so the
//! same routine evaluates a series at the nodes and projects nodal values back
//! onto modes. Small periods use a dense table, larger ones a complex FFT of
//! length `2P` over a zero-extended input.

use std::sync::Arc;

use num_traits::Zero;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Sin,
    Cos,
}

/// Periods at or below this size use the dense table.
const DENSE_MAX_PERIOD: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Dense,
    Fft,
}

#[derive(Clone)]
enum Engine<T: Scalar> {
    Dense { cos: Vec<T>, sin: Vec<T> },
    Fft(Arc<dyn Fft<T>>),
}

#[derive(Clone)]
pub struct TrigSums<T: Scalar> {
    period: usize,
    engine: Engine<T>,
}

impl<T: Scalar> std::fmt::Debug for TrigSums<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let backend = match self.engine {
            Engine::Dense { .. } => "dense",
            Engine::Fft(_) => "fft",
        };
        f.debug_struct("TrigSums")
            .field("period", &self.period)
            .field("backend", &backend)
            .finish()
    }
}

impl<T: Scalar> TrigSums<T> {
    pub fn new(period: usize, backend: Option<Backend>) -> Self {
        let backend = backend.unwrap_or(if period <= DENSE_MAX_PERIOD {
            Backend::Dense
        } else {
            Backend::Fft
        });
        let engine = match backend {
            Backend::Dense => {
                // table[(i-1)*(P-1) + (j-1)] for i, j in 1..P; reduce i*j mod 2P
                // before evaluating so large products stay exact.
                let m = period - 1;
                let mut cos = vec![T::zero(); m * m];
                let mut sin = vec![T::zero(); m * m];
                for i in 1..period {
                    for j in 1..period {
                        let r = (i * j) % (2 * period);
                        let theta = std::f64::consts::PI * r as f64 / period as f64;
                        cos[(i - 1) * m + (j - 1)] = T::lit(theta.cos());
                        sin[(i - 1) * m + (j - 1)] = T::lit(theta.sin());
                    }
                }
                Engine::Dense { cos, sin }
            }
            Backend::Fft => {
                let mut planner = FftPlanner::<T>::new();
                Engine::Fft(planner.plan_fft_forward(2 * period))
            }
        };
        Self { period, engine }
    }


    /// Applies the sums to `lines` independent rows of `input` (row-major,
    /// `n_in` entries per row holding `x_1..x_n_in`), producing `n_out`
    /// outputs per row for `i = 1..=n_out`.
    pub fn apply(&self, kind: Kind, input: &[T], lines: usize, n_in: usize, n_out: usize) -> Vec<T> {
        debug_assert_eq!(input.len(), lines * n_in);
        debug_assert!(n_in < self.period && n_out < self.period);
        let mut out = vec![T::zero(); lines * n_out];
        match &self.engine {
            Engine::Dense { cos, sin } => {
                let table = if kind == Kind::Cos { cos } else { sin };
                let m = self.period - 1;
                for (row_in, row_out) in input.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                    for (i, o) in row_out.iter_mut().enumerate() {
                        let trow = &table[i * m..i * m + n_in];
                        *o = trow.iter().zip(row_in).fold(T::zero(), |acc, (&t, &x)| acc + t * x);
                    }
                }
            }
            Engine::Fft(fft) => {
                let len = 2 * self.period;
                let mut buf = vec![Complex::<T>::zero(); lines * len];
                for (row_in, chunk) in input.chunks_exact(n_in).zip(buf.chunks_exact_mut(len)) {
                    for (j, &x) in row_in.iter().enumerate() {
                        chunk[j + 1] = Complex::new(x, T::zero());
                    }
                }
                fft.process(&mut buf);
                // X_i = Σ_j x_j (cos(π i j/P) - i sin(π i j/P))
                for (chunk, row_out) in buf.chunks_exact(len).zip(out.chunks_exact_mut(n_out)) {
                    for (i, o) in row_out.iter_mut().enumerate() {
                        let z = chunk[i + 1];
                        *o = match kind {
                            Kind::Cos => z.re,
                            Kind::Sin => -z.im,
                        };
                    }
                }
            }
        }
        out
    }

    /// Separable 2D application: `kind_x` along rows (first index), `kind_y`
    /// along columns (second index). Input is `rows × cols` row-major, output
    /// `out_rows × out_cols`.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_2d(
        &self,
        input: &[T],
        rows: usize,
        cols: usize,
        kind_x: Kind,
        kind_y: Kind,
        out_rows: usize,
        out_cols: usize,
    ) -> Vec<T> {
        let along_y = self.apply(kind_y, input, rows, cols, out_cols);
        let t = transpose(&along_y, rows, out_cols);
        let along_x = self.apply(kind_x, &t, out_cols, rows, out_rows);
        transpose(&along_x, out_cols, out_rows)
    }
}

fn transpose<T: Copy + Default>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::default(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
