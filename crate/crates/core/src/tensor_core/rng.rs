use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::C64;

/// Identifier of the generator behind every [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha20";

/// Seed plus the label of the counter-based generator it feeds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub algorithm: String,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            algorithm: RNG_ALGORITHM.to_string(),
        }
    }

    /// Independent stream `id` of this seed. Streams never overlap, so work
    /// items can each own one regardless of how they are scheduled.
    pub fn stream(&self, id: u64) -> RngStream {
        let mut inner = ChaCha20Rng::seed_from_u64(self.seed);
        inner.set_stream(id);
        RngStream { inner }
    }
}

/// Deterministic draw sequence. Every scalar consumes exactly one 64-bit word.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha20Rng,
}

impl RngStream {
    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform on `[-scale, scale)`.
    #[inline]
    pub fn symmetric(&mut self, scale: f64) -> f64 {
        scale * (2.0 * self.unit() - 1.0)
    }

    /// Real part first, then imaginary part, each uniform on `[-1, 1)`.
    #[inline]
    pub fn complex_unit_box(&mut self) -> C64 {
        let re = self.symmetric(1.0);
        let im = self.symmetric(1.0);
        C64::new(re, im)
    }

    /// Standard normal via Box-Muller (two words per draw).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }
}

/// `rows x cols` matrix with real and imaginary parts i.i.d. uniform on
/// `[-1, 1]`, filled in row-major order (2 draws per entry).
pub fn sample_uniform_complex(rows: usize, cols: usize, rng: &mut RngStream) -> Result<Matrix<C64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot sample a {rows}x{cols} matrix"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.complex_unit_box()).collect();
    Matrix::from_vec(rows, cols, data)
}
