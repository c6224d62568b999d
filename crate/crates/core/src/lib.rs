//! Regression-based lower bounds on mutual information and channel capacity.
//!
//! The central quantity is `ν(Z|X) = det E{V[Z|X]} / det V[Z]`, and the bound
//! `I(X;Z) ≥ −½ log ν`. The crate provides the bound algebra ([`bounds`]),
//! capacity lower bounds for known channels ([`capacity`]), a sample-based
//! estimator built from a Gaussianizing transform, a smoothing spline and a
//! BCa bootstrap ([`transforms`], [`spline`], [`estimate`]), the Kraskov k-NN
//! estimator as a baseline ([`knnmi`]), reference models with known
//! information ([`models`]) and a simulation driver ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod capacity;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod knnmi;
pub mod models;
pub mod normal;
pub mod rng;
pub mod sample;
pub mod spline;
pub mod transforms;

pub use error::{Error, Result};
pub use sample::JointSample;
