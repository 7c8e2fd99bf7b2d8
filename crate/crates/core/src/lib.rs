//! Distributed variational-Bayes tracking of an extended object with a
//! random-matrix (Gaussian inverse Wishart) model and unknown sensor noise.
//!
//! Module map:
//!
//! - [`matstat`]: SPD matrices, Wishart and inverse Wishart densities, moments and samplers.
//! - [`model`]: dynamics and measurement matrices.
//! - [`vbcore`]: GIW prediction and the centralized VB measurement update.
//! - [`consensus`]: sensor networks and ADMM average consensus.
//! - [`dfilter`]: the distributed tracker and its baseline variants.
//! - [`metrics`]: Gaussian Wasserstein distance and RGWE.
//! - [`simkit`]: scenario ground truth and measurement synthesis.
//! - [`experiment`] and [`plot`]: Monte-Carlo driver and plot data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod dfilter;
pub mod error;
pub mod experiment;
pub mod matstat;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod simkit;
pub mod vbcore;

pub use error::{Error, Result};
