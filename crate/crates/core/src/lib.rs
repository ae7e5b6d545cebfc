//! Two-layer quasi-geostrophic flow on a square with homogeneous Dirichlet
//! boundaries: a sine-spectral discretization, the deterministic IMEX
//! dynamics, trace-class stochastic forcing, and the large-deviation action
//! functional with its discrete adjoint and minimum-action optimizer.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision instantiation used by the
//! experiment and command-line crates.

// `!(x <= tol)` is used on purpose: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod scalar;

pub mod action;
pub mod forcing;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid64 = spectral::GridSpec<f64>;
pub type Field64 = spectral::LayeredField<f64>;
pub type Spectral64 = spectral::Spectral<f64>;
pub type Model64 = model::QgModel<f64>;
pub type Params64 = model::ModelParams<f64>;
pub type Noise64 = forcing::NoiseSpec<f64>;
pub type Control64 = action::ControlPath<f64>;
