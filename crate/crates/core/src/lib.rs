//! Hallucination detection from single-pass token entropy sequences.
//!
//! The crate turns per-token top-k probabilities into Shannon entropy sequences,
//! classifies them with a BiLSTM + attention network trained from scratch, and
//! ships the comparison methods (discrete semantic entropy, linear probes) and
//! macro-F1 evaluation used to benchmark it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
