//! Differentially private synthetic data from noisy marginals.
//!
//! The pipeline follows select-measure-generate: choose a set of marginals
//! (PrivBayes, MST or AIM selection), release them with exact discrete
//! Gaussian noise under a zCDP ledger, fit a graphical model consistent with
//! the noisy counts and sample from it. Preprocessing (bounds, discretization)
//! is differentially private too, and an auditing harness checks the whole
//! thing empirically.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod cli;
pub mod domain;
pub mod error;
pub mod metrics;
pub mod pgm;
pub mod preprocess;
pub mod privacy;
pub mod rng;
pub mod select;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
