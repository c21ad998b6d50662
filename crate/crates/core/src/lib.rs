//! Core numerics for MDL-based generalization bounds and data-dependent
//! Gaussian-mixture prior regularization of stochastic encoders.
//!
//! The crate is split along the main moving parts:
//!
//! - [`bounds`]: closed-form evaluation of the in-expectation and tail
//!   generalization bounds, the binary-entropy machinery behind them, and
//!   the curve generators used to compare bounds.
//! - [`gaussian`]: diagonal-Gaussian and mixture primitives.
//! - [`kl`]: variational / product-of-Gaussians sandwich estimators for KL
//!   divergences against mixtures, plus a Monte-Carlo reference oracle.
//! - [`prior`]: the per-class Gaussian-mixture prior bank with streaming
//!   E/M updates, moving-average blending, and the regularizer evaluations
//!   (lossless and lossy variants) with analytic gradients.
//! - [`trainer`]: a desk-scale stochastic encoder/decoder training loop
//!   with manual backpropagation and selectable regularizer.
//! - [`data`]: dataset ingestion (sparse text format, synthetic blobs),
//!   normalization, and deterministic batching.
//!
//! The crate is `no_std`-compatible (requires `alloc`); all float math goes
//! through `libm` so results are identical with and without the `std`
//! feature. File and process I/O live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod bounds;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod kl;
pub mod prior;
pub mod trainer;

mod numeric;

pub use error::{Error, Result};
