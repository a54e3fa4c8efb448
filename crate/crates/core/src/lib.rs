//! Simulation and analysis of two-mode continuous-variable Gaussian states
//! whose modes carry orbital angular momentum.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod homodyne;
pub mod optics;
pub mod replicate;
pub mod rng;

pub use error::{Error, Result};
