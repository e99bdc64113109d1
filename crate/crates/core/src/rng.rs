//! Named, independently seeded random streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A labelled random stream seeded from `(master_seed, label)`.
///
/// Each consumer (for example `node-7-txgen`) owns its own stream, so changing
/// how much one consumer draws never shifts another consumer's sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        Self {
            label,
            rng: ChaCha12Rng::from_seed(seed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw on (0, 1].
    pub fn open_unit(&mut self) -> f64 {
        1.0 - self.rng.gen::<f64>()
    }

    /// Uniform integer in `[low, high]`.
    pub fn range_inclusive(&mut self, low: u64, high: u64) -> u64 {
        self.rng.gen_range(low..=high)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Exponential variate by inversion: `-mean * ln(U)` with `U` uniform on (0, 1].
///
/// `mean` must be positive; a zero mean yields zero (used by the degenerate
/// zero-delay configuration).
pub fn sample_exp(stream: &mut RngStream, mean: f64) -> f64 {
    debug_assert!(mean >= 0.0);
    exp_from_uniform(stream.open_unit(), mean)
}

pub(crate) fn exp_from_uniform(u: f64, mean: f64) -> f64 {
    -mean * u.ln()
}
