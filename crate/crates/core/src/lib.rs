//! Bayesian predictive inference for finite-population quantities when units
//! are selected with probability proportional to an unobserved size measure.
//!
//! The analyst sees the sampled responses, their first-order inclusion
//! probabilities and the population size total. Non-sampled responses and
//! size measures are imputed with a constrained Gibbs sampler whose output is
//! reweighted by sampling importance resampling.
//!
//! Module map:
//! - [`model`]: domain types, the size-measure transform, feasibility regions
//!   and the Poisson selection likelihood.
//! - [`dist`]: seeded random streams, truncated normal and inverse-gamma
//!   samplers, the structured covariance used throughout.
//! - [`mvn`]: multivariate normal rectangle probabilities (separation of
//!   variables with randomized lattice rules).
//! - [`gibbs`]: the Gibbs sampler over the approximate posterior.
//! - [`normconst`]: log normalisation constants used as SIR weights.
//! - [`sir`]: weighting, resampling and posterior summaries.
//! - [`baselines`]: systematic PPS sampling, Horvitz-Thompson and the
//!   ignorable-model comparison.
//! - [`harness`]: the simulation study driver.

pub mod baselines;
pub mod dist;
pub mod error;
pub mod gibbs;
pub mod harness;
pub mod model;
pub mod mvn;
pub mod normconst;
pub mod sir;

pub use error::{Error, Result};
