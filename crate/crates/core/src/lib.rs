//! Imaging a point reflector through a randomly perturbed waveguide with
//! cross correlations of array recordings.

pub mod correlation;
pub mod error;
pub mod fields;
pub mod imaging;
pub mod medium;
pub mod moments;
pub mod montecarlo;
pub mod propagator;
pub mod quadrature;
pub mod report;
pub mod validate;
pub mod waveguide;

pub use error::{Error, Result};
