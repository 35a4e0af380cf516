//! Spectral diagonal ensemble Kalman filters.
//!
//! The sample covariance of an ensemble is replaced by its diagonal in an
//! orthonormal spectral basis (DCT, DST or a periodized wavelet), which gives
//! cheap analysis updates with built-in localization. The crate contains the
//! transforms, ensemble statistics, analysis kernels, the Lorenz 96 and
//! shallow-water models used for twin experiments, Monte Carlo checks of the
//! closed-form covariance error expressions, and the experiment harness.

pub mod analysis;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod rng;
pub mod theory;
pub mod transforms;

pub use error::{Error, Result};
