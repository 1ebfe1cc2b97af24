//! Temporal variational autoencoder for multivariate return series.
//!
//! The crate bundles the model itself ([`model`]), the small autodiff core it
//! trains with ([`nn`]), Gaussian output heads ([`gaussians`]), dataset
//! generation and preprocessing ([`data`]), classical VaR benchmarks
//! ([`benchmarks`]) and the diagnostics and backtesting harness
//! ([`evaluation`]).

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gaussians;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
