//! Seed derivation. Every stochastic component takes a seed derived from
//! the experiment seed plus a salt (stream id, frame index), so runs are
//! reproducible and streams stay decorrelated.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a salt.
pub fn derive(base: u64, salt: u64) -> u64 {
    mix64(base ^ mix64(salt))
}

/// Derive a child seed from a base seed and two salts.
pub fn derive2(base: u64, salt_a: u64, salt_b: u64) -> u64 {
    derive(derive(base, salt_a), salt_b)
}

/// Deterministic generator for a (base, salt) pair.
pub fn chacha(base: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, salt))
}
