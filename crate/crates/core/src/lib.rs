//! Numerical laboratory for Dyson eigenvalue/eigenvector flows and the
//! eigenvector moment flow, with cross-verification between the Monte
//! Carlo eigenvector SDE and the moment-flow ODE, detailed-balance checks
//! of the reversible measure, and finite-N Gaussian/QUE statistics.

pub mod dyson;
pub mod ensemble;
pub mod error;
pub mod momentflow;
pub mod observables;
pub mod output;
pub mod rng;
pub mod semicircle;

pub use error::{Error, Result};
