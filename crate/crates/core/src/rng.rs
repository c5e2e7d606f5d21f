//! Seed derivation for reproducible, independently seeded RNG streams.
//!
//! Every random step in the pipeline owns a stream derived from
//! (parent seed, label, index), so replicates, chains, and prediction
//! stages can run in any order without perturbing one another.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer; good avalanche for seed mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a textual label, and an index.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut h = splitmix64(parent);
    for &b in label.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Builds the RNG used throughout the crate from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_labels_and_indices() {
        let a = derive_seed(7, "sample", 0);
        let b = derive_seed(7, "sample", 1);
        let c = derive_seed(7, "chain", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
        // deterministic
        assert_eq!(a, derive_seed(7, "sample", 0));
    }
}
