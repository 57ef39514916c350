//! Seed derivation and construction of deterministic generators.
//!
//! Every randomized step in the crate takes an explicit `u64` seed.
//! Derived seeds (per bootstrap replicate, per perturbation repeat,
//! per trial) are produced with a splitmix64 finalizer so that
//! distinct (base, salt) pairs map to well-separated streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a base seed and a salt.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
