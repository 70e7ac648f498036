//! Scattering transform with quadratic nonlinearity (STQN) for stationary
//! Gaussian processes: synthesis, scattering, Wiener-chaos limit formulas and
//! Monte Carlo verification.

pub mod chaos;
pub mod cli;
pub mod config;
pub mod error;
pub mod models;
pub mod quad;
pub mod rng;
pub mod scattering;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
