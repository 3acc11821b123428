//! Seeded random streams.
//!
//! Every stochastic routine takes a `u64` seed and derives its generator
//! here, so a run is reproducible bit for bit from its seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

/// Generator for `seed`, on an independent `stream` (one stream per purpose).
pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[0, 1)`.
pub fn unit(rng: &mut SeededRng) -> f64 {
    rand::Rng::random::<f64>(rng)
}

/// Uniform index in `[0, n)`; `n` must be positive.
pub fn index(rng: &mut SeededRng, n: usize) -> usize {
    rand::Rng::random_range(rng, 0..n)
}

pub fn shuffle<T>(rng: &mut SeededRng, items: &mut [T]) {
    rand::seq::SliceRandom::shuffle(items, rng);
}
