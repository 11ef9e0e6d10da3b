//! Optimization toolkit for online continual learning (OCL).
//!
//! The crate covers the whole loop of an OCL experiment on synthetic,
//! analytically tractable streams:
//!
//! - [`stream`]: seeded non-stationary data streams and the four-step
//!   predict / reveal / integrate / update protocol.
//! - [`datapool`]: reservoir training pool, online holdout, pure and mixed
//!   replay sampling.
//! - [`model`]: small parametric models with exact losses and gradients.
//! - [`optim`]: SGD, ADAM and the moving-average family (EMA and the
//!   adaptive moving average, AMA).
//! - [`schedule`]: constant, reduce-when-plateau, MA-driven (MALR) and
//!   cyclic cosine learning-rate control.
//! - [`metrics`]: learning efficacy, information retention, forward
//!   transfer and online validation accumulators.
//! - [`theory`]: evaluation and empirical verification of the SGD
//!   non-stationary convergence bound.
//! - [`harness`]: config-driven runner, presets, CSV artifacts and reports.

pub mod datapool;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod stream;
pub mod theory;

pub use error::{Error, Result};
