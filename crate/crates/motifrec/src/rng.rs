//! Deterministic seed derivation.
//!
//! Every random choice in the crate draws from a [`ChaCha8Rng`] seeded
//! through [`derive_seed`], so independent workers (per central node, per
//! epoch, per evaluation user) get reproducible streams regardless of
//! scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a label and a list of stream indices into a base seed.
///
/// SplitMix64-style finalizer; stable across platforms.
pub fn derive_seed(base: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for b in label.as_bytes() {
        h = mix(h ^ u64::from(*b));
    }
    for ix in indices {
        h = mix(h ^ *ix);
    }
    mix(h)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream rng for `(base seed, label, indices)`.
pub fn stream(base: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label, indices))
}
