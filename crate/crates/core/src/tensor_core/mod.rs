//! Numerical foundation: complex matrices, seeded sampling and the affine
//! scan kernels every linear recurrence in the crate reduces to.

mod matrix;
mod rng;
mod scan;

pub use matrix::{max_relative_deviation, Matrix};
pub use rng::{sample_uniform_complex, RngSpec, RngStream, RNG_ALGORITHM};
pub use scan::{
    scan_combine, scan_identity, scan_parallel, scan_sequential, AffineElement, AffineSequence,
    StateSequence,
};

pub type C64 = num_complex::Complex64;
