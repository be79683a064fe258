//! Deterministic seed derivation for independent RNG streams.
//!
//! Every stage, episode, and batch shuffle draws from its own stream derived
//! from (base seed, stream label, index), so runs reproduce byte-identically
//! regardless of which other streams were consumed in between.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a over the label bytes.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a base seed, a stream label, and an index.
pub fn derive(base: u64, label: &str, index: u64) -> u64 {
    mix(base ^ mix(hash_label(label)) ^ mix(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// A seeded RNG for the given stream. ChaCha8 is portable and reproducible.
pub fn rng(base: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = rng(7, "episode", 3);
        let mut b = rng(7, "episode", 3);
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());

        assert_ne!(derive(7, "episode", 3), derive(7, "episode", 4));
        assert_ne!(derive(7, "episode", 3), derive(7, "batch", 3));
        assert_ne!(derive(7, "episode", 3), derive(8, "episode", 3));
    }
}
