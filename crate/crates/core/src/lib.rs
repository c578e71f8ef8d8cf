//! Simulation and estimation toolkit for pulsed heralded single-photon
//! sources built on spontaneous parametric down-conversion.
//!
//! The crate is organised along the physical chain:
//!
//! - [`phase_matching`]: dispersion, type-I collinear phase matching, tuning
//!   curves and the joint spectral intensity of the photon pair.
//! - [`pair_source`]: per-pulse pair-number statistics and binomial loss.
//! - [`detectors`]: threshold click detectors and trigger dead time.
//! - [`experiment`]: the full forward model (analytic and Monte Carlo),
//!   heralded photon-number statistics and HBT correlations.
//! - [`estimator`]: recovers the mean pair number and coupling coefficients
//!   from measured count rates.
//! - [`qkd`]: multiphoton security bound and the pump-power tradeoff.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detectors;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod pair_source;
pub mod phase_matching;
pub mod qkd;

mod numeric;

pub use error::{Error, Result};
