//! Statistical failure models for components exposed to high-voltage
//! pulses, built from sparse step-stress test data and expert anchors.
//!
//! The pipeline runs: shot data ([`testdata`]) and expert anchors ([`sme`])
//! → prior fitted by Bayesian optimization ([`bopt`]) over the
//! [`hierarchy`] → posterior sampling ([`mcmc`]) → a failure CDF with error
//! bands ([`failure_model`]). [`baseline`] holds the least-squares Gaussian
//! comparison fit.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod bopt;
pub mod cdf;
pub mod error;
pub mod failure_model;
pub mod hierarchy;
pub mod kde;
pub mod mcmc;
pub mod pipeline;
pub mod seed;
pub mod sme;
pub mod stats;
pub mod synthetic;
pub mod testdata;

pub use error::{Error, Result};
