//! Event-level simulator for a multiplexed atomic frequency comb memory fed by
//! a heralded photon-pair source.
//!
//! The crate is layered bottom-up: [`spectral`] grids and transforms,
//! [`memory`] comb profiles and their linear response, [`source`] pair
//! generation, [`detection`] detector and timing models, [`analysis`]
//! coincidence statistics, and [`scenario`] which strings them together.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod detection;
pub mod error;
pub mod memory;
pub mod rng;
pub mod scenario;
pub mod source;
pub mod spectral;

pub use error::{Error, Result};
pub use memory::{CombProfile, CombSection, EchoReport, PumpingConfig, SectionResponse, ToothShape};
pub use spectral::{FrequencyGrid, SpectralField, TemporalField};
