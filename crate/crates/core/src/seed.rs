//! Counter-based seed derivation.
//!
//! A run is configured with a single `u64` seed. Every stochastic stage draws
//! its own stream from `derive_seed(run_seed, stage, counter)`, where `stage`
//! is a short label such as `"sample/base"` and `counter` is usually the
//! iteration index. The derivation hashes the label with 64-bit FNV-1a, mixes
//! it with the seed and counter, and finishes with the SplitMix64 finalizer, so
//! streams for different stages or iterations are decorrelated while remaining
//! a pure function of their inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for `label` at position `counter` of the stream rooted at `seed`.
pub fn derive_seed(seed: u64, label: &str, counter: u64) -> u64 {
    let mixed = splitmix64(seed ^ fnv1a(label));
    splitmix64(mixed ^ counter.wrapping_mul(GOLDEN))
}

/// Seed scoped to a single problem within a stage.
pub fn problem_seed(seed: u64, problem_id: &str) -> u64 {
    derive_seed(seed, problem_id, 0)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_pure_and_label_sensitive() {
        assert_eq!(derive_seed(7, "sample/base", 1), derive_seed(7, "sample/base", 1));
        assert_ne!(derive_seed(7, "sample/base", 1), derive_seed(7, "sample/high", 1));
        assert_ne!(derive_seed(7, "sample/base", 1), derive_seed(7, "sample/base", 2));
        assert_ne!(derive_seed(7, "sample/base", 1), derive_seed(8, "sample/base", 1));
    }
}
