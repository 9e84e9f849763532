//! Uncertainty-aware learned index benefit estimation.
//!
//! The crate is `no_std` (with `alloc`) and contains the algorithmic core:
//!
//! - [`synthdb`]: synthetic schemas and workloads, a product-form cost oracle
//!   with log-normal execution noise, and a biased what-if estimator.
//! - [`featurize`]: fixed-length vector sets for `(query, I0, I)` triples and
//!   the one-hot embedding with a reserved unknown slot.
//! - [`neural`]: dense layers, dropout with a Monte-Carlo inference mode and
//!   manual backpropagation.
//! - [`estimator`]: encoder, mirrored decoder and MC-dropout predictor with
//!   two-phase training.
//! - [`uq`]: reconstruction and dropout-variance uncertainties, IQR threshold
//!   calibration, the result filter and update signals.
//! - [`advisor`]: estimator ports, workload benefit and a budget-constrained
//!   greedy enumerator.
//! - [`evalkit`]: dataset construction, OOD splits, metrics and baselines.
//!
//! File formats, the experiment runner and the CLI live in the `benefit-uq`
//! companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod advisor;
pub mod error;
pub mod estimator;
pub mod evalkit;
pub mod featurize;
pub mod hashing;
pub mod neural;
pub mod stats;
pub mod synthdb;
pub mod uq;

pub use error::{Error, Result};
