//! Adaptive importance sampling for discrete Bayesian networks and
//! single-decision influence diagrams.
//!
//! A sampler with the same structure as the model is tuned online by
//! stochastic gradient steps so that its importance weights have low
//! variance. [`exact`] provides enumeration ground truth for small models.

pub mod adapt;
pub mod cli;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod fixtures;
pub mod model;
pub mod sampling;

pub use error::{Error, Result};
