//! Parallel echo state networks.
//!
//! Untrained reservoirs built from a complex diagonal linear recurrence, which
//! reduces to an element-wise affine scan and can therefore be evaluated in
//! parallel over time. The crate also carries the classical leaky ESN and
//! simple cycle reservoir baselines, ridge and MLP readouts, the synthetic
//! benchmark generators, and executable checks of the stability and
//! diagonal-equivalence results.

pub mod baselines;
pub mod error;
pub mod readout;
pub mod reservoir;
pub mod tasks;
pub mod tensor_core;
pub mod theory_checks;

pub use error::{Error, Result};
pub use tensor_core::{C64, RngSpec, RngStream};

/// Version string embedded into serialized records and run outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
