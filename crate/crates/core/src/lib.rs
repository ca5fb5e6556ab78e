//! Desk-scale numerical laboratory for attention-induced biases in a
//! minimal transformer generative recommender.
//!
//! The crate is organized around four experiment engines, each verifying
//! one analytic result about dot-product-softmax attention:
//!
//! * [`positional`] — relative and rotary positional encodings tilt
//!   attention mass toward near history as their strength grows.
//! * [`popularity`] — surrogate SGD on frequency-imbalanced data amplifies
//!   exposure of frequent tokens super-linearly.
//! * [`latent`] — independent Gaussian logit noise induces exactly
//!   lognormal pairwise attention odds.
//! * [`retrain`] — closed-loop retraining on partially delegated logs
//!   concentrates the output distribution round over round.
//!
//! [`attention`] and [`model`] hold the shared attention primitives and
//! the minimal encoder-decoder recommender they act on; [`config`],
//! [`report`] and [`runner`] form the deterministic experiment CLI.

pub mod attention;
pub mod config;
pub mod error;
pub mod latent;
pub mod model;
pub mod popularity;
pub mod positional;
pub mod report;
pub mod retrain;
pub mod rng;
pub mod runner;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
