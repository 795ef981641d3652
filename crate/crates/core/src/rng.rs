//! Seeded randomness used throughout the crate.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

/// The single RNG type of the crate; ChaCha8 gives identical streams on
/// every platform.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a parent seed and a stream label.
pub fn derive(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform integer in `lo..=hi`.
#[inline]
pub fn int_inclusive(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}
