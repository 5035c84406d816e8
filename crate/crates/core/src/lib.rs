//! Partitioned Boruta feature selection for expression matrices.
//!
//! The crate covers the whole pipeline: loading and preprocessing an
//! expression matrix, a random-forest engine with per-tree impurity
//! importances, the Boruta shadow-feature loop, partitioned selection with a
//! max-depth sweep that yields nested ranked feature sets, five base
//! classifiers, max-vote and average-vote ensembles, and a stratified
//! cross-validation and metrics harness.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boruta;
pub mod classifiers;
pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod forest;
pub mod fsfsp;
pub mod proba;
pub mod rng;
pub mod testkit;

pub use error::{Error, Result};
