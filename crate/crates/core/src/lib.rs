//! Fast surrogate models of unit-cell optical transmission and the design
//! loops built on top of them.
//!
//! The crate is organized around one expensive function: the complex
//! transmission coefficient `t(p)` of a periodic multilayer unit cell,
//! computed by a frequency-domain Helmholtz solve ([`fdfd`]). Everything else
//! exists to approximate, accelerate, or exploit that function:
//!
//! - [`geometry`] — parameterized unit-cell families, bounds, and the
//!   13-entry network encoding (10 normalized widths + 3-way one-hot).
//! - [`nnet`] — a small feed-forward network engine with exact reverse-mode
//!   gradients, Gaussian negative-log-likelihood loss, and Adam.
//! - [`surrogate`] — deep ensembles over real/imaginary parts with pooled
//!   mean/variance, the fractional-error metric, and a Hessian probe.
//! - [`active_learning`] — variance-driven acquisition against a pluggable
//!   oracle, plus the random-sampling baseline and learning-curve records.
//! - [`chebyshev`] — tensor-product Chebyshev interpolation baseline.
//! - [`metaopt`] — far-field synthesis, the expected-intensity objective,
//!   worst-case multi-wavelength design optimization, and validation.
//! - [`dataset`] — the CSV interchange format shared by the labelers and
//!   the learning loops.

pub mod active_learning;
pub mod chebyshev;
pub mod dataset;
pub mod error;
pub mod fdfd;
pub mod geometry;
pub mod metaopt;
pub mod nnet;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
