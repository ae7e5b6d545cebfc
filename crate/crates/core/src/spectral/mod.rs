//! Sine-basis representation of two-layer fields on the square `(0, L)²`.
//!
//! A layer is stored as `N × N` real coefficients `a[j][k]` of
//! `sin(jπx/L) sin(kπy/L)`, `1 ≤ j, k ≤ N`, at flat index `(j-1)·N + (k-1)`.
//! Homogeneous Dirichlet data for both the stream function and potential
//! vorticity hold mode by mode, so no boundary handling appears anywhere.

mod grid;
mod norms;
mod ops;
pub mod snapshot;
pub(crate) mod trig;

pub use grid::{Dealias, GridSpec, LayeredField};
pub use norms::{x_norm, x_norm_conventional, XNormAccumulator};
pub use ops::{Deriv, Spectral};
pub use trig::Backend;
