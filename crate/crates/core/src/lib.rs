//! GKP-Gaussian quantum error-correction codes for general Gaussian noise.
//!
//! Quadratures are ordered `(q1, p1, ..., qn, pn)` and the vacuum has variance 1/2
//! in each quadrature. An AWGN channel with standard deviation `sigma` adds
//! `sigma^2` to the variance of every quadrature.

pub mod analysis;
pub mod concat;
pub mod error;
pub mod gaussian;
pub mod mc;
pub mod memory;
pub mod mixture;
pub mod optimize;
pub mod reduction;
pub mod two_mode;

#[cfg(test)]
mod oracle_tests;

pub use error::{Error, Result};

/// Lattice spacing of the ideal square GKP code.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
