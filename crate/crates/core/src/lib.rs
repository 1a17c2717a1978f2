//! Numerical laboratory for orbital free entropy.
//!
//! Finite-N microstate constructions, liberation dynamics, dimension
//! formulas and transport inequalities, implemented as estimators and exact
//! calculators.

pub mod classical;
pub mod config;
pub mod dimension;
pub mod error;
pub mod liberation;
pub mod linalg;
pub mod microstates;
pub mod ncalg;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
