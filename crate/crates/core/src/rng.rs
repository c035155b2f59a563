//! Seeded RNG streams.
//!
//! Every randomised routine in this crate derives its generator from a base
//! seed plus a stream index, so results are reproducible bit-for-bit and
//! independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent generator for stream `index` of a base seed.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mixed = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    ChaCha8Rng::seed_from_u64(mixed)
}
