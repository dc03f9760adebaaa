//! Variational Monte Carlo for neural quantum states of the transverse-field
//! Ising model, sampled on an emulated probabilistic-bit computer.

pub mod error;
pub mod estimator;
pub mod fixed_point;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod sampler;
pub mod sr;
pub mod streams;
pub mod trainer;

pub use error::{Error, Result};
