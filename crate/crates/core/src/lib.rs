//! Joint reconstruction of correlated fields and their power spectra from
//! nonlinear, noisy measurements.
//!
//! The signal is written as `s = A xi` with a white excitation `xi` and an
//! amplitude operator `A` built from a binned log spectrum. Excitations are
//! found by Newton minimization, the spectrum by minimizing a sampled KL
//! estimate, and the noise level can optionally be calibrated alongside.

pub mod error;
pub mod grid;
pub mod inference;
pub mod model;
pub mod nonlinearity;
pub mod operators;
pub mod sampling;
pub mod solvers;
#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
