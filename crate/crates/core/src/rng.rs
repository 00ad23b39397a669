//! Seed derivation for reproducible randomized operations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a sequence of stream identifiers (epoch, sample
/// index, operation index, ...) into a new seed. SplitMix64 finalizer per
/// component; order matters.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix(base ^ 0x9E37_79B9_7F4A_7C15);
    for &p in parts {
        state = splitmix(state ^ splitmix(p.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[0]), derive_seed(8, &[0]));
        assert_ne!(derive_seed(7, &[]), derive_seed(7, &[0]));
    }
}
