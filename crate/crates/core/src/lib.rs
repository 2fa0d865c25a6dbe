//! Hyperbolic one-class classification.
//!
//! Real-only training data is paired with pseudo-negatives drawn from an
//! adaptive-mean Gaussian, pushed through a small fully connected encoder,
//! norm-clipped, mapped onto a Poincaré ball and scored by a two-class
//! gyroplane head. See the crate README for the command-line workflow.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod selfcheck;
pub mod tape_geometry;
pub mod trainer;

pub use error::{Error, Result};
