//! Simulation and analysis of two-photon interference in spatial-frequency space
//! recorded by single-photon-sensitive cameras.

pub mod analysis;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod map;
pub mod model;
pub mod sampler;

pub use error::{Error, Result};
