//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit seed or generator. Child
//! streams (per image, per worker, per iteration) are derived from a run
//! seed with [`derive_seed`] so results never depend on scheduling.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Mixes a stream index into a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn child_stream(seed: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, index))
}
