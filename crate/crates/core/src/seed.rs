//! Deterministic seed derivation.
//!
//! Replication studies and multi-restart fits need independent RNG streams
//! that are reproducible from a single user-supplied seed. `derive_seed`
//! mixes a base seed with a sequence of tags (replicate index, restart
//! index, grid cell, ...) through a splitmix64-style finalizer so that
//! nearby inputs produce uncorrelated outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix one 64-bit word into a running state (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a list of stream tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = mix(base);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// Construct a seeded RNG for the stream identified by `tags`.
pub fn stream_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_give_distinct_seeds() {
        let a = derive_seed(7, &[0]);
        let b = derive_seed(7, &[1]);
        let c = derive_seed(8, &[0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(42, &[1, 2]), derive_seed(42, &[1, 2]));
    }

    #[test]
    fn tag_order_matters() {
        assert_ne!(derive_seed(42, &[1, 2]), derive_seed(42, &[2, 1]));
    }
}
