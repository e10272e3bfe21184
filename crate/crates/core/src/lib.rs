//! Noisy DCE-MRI parameter estimation.
//!
//! The pipeline has three stages:
//!
//! 1. noise estimation on magnitude data ([`noise`], with the variance-stabilizing
//!    fallback in [`vst`]),
//! 2. signal restoration: forward VST, temporo-spatial collaborative filtering
//!    ([`tscf`]), unbiased inverse VST,
//! 3. pharmacokinetic estimation with the standard Tofts model ([`pk`]).
//!
//! [`phantom`] synthesizes a digital reference object with known ground truth and
//! [`metrics`] scores parameter maps against it. [`volume`] holds the data model and
//! the on-disk container format shared by every stage.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod pk;
pub mod tscf;
pub mod volume;
pub mod vst;

pub use error::{Error, Result};
pub use volume::{AcquisitionParams, AifKind, AifSeries, ParamMap, TimeSeriesVolume, ValueKind};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
