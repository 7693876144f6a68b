//! Recruitment modelling for multicentre clinical trials under a
//! Poisson-gamma model with time-dependent rates.
//!
//! Centre baseline rates are gamma distributed and shared time modulation
//! `r(t)` scales them. On top of that the crate provides analytic forecasts
//! with negative binomial predictive bounds, maximum-likelihood fitting,
//! rate-homogeneity tests with Monte Carlo power analysis, a daily
//! discrete-event simulator and interim re-projection.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod estimation;
pub mod forecast;
pub mod homogeneity;
mod optim;
pub mod power;
pub mod rate;
pub mod reprojection;
pub mod scenarios;
pub mod simulator;

pub use distributions::{MomentPair, PGParams};
pub use error::{Error, Result};
pub use rate::{CentreProfile, RateFunction};
