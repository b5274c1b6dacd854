//! Deterministic per-stream random generators.
//!
//! Each stream is a ChaCha8 generator seeded by mixing a base seed with a
//! path of indices (phase, temperature index, start index, chain index...)
//! through the SplitMix64 finalizer. Streams never depend on scheduling, so
//! ensembles give identical results for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `base`: `h = splitmix64(h ^ splitmix64(p))` per element.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |h, &p| splitmix64(h ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn stream(base: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, path))
}
