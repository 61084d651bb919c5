//! Gradient-free mirror descent on the probability simplex.
//!
//! The crate is organised bottom-up:
//!
//! - [`rng`]: reproducible `(seed, stream)` random streams;
//! - [`sampling`]: random directions on the l1/l2/l-inf unit spheres and balls;
//! - [`problems`]: stochastic test objectives with known optimum and constants;
//! - [`oracle`]: the inexact two-point zeroth-order oracle and its noise channels;
//! - [`estimators`]: two-point smoothed gradient surrogates and their exact limits;
//! - [`solver`]: entropic dual averaging with the theorem step-size schedules;
//! - [`experiment`] and [`verify`]: replicated runs, CSV output and Monte-Carlo checks.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod simplex;
pub mod solver;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use rng::RngStream;
