//! Deterministic seed derivation.
//!
//! Every stochastic step takes its own generator, seeded from a master seed
//! and a path of stream tags. Results therefore never depend on evaluation
//! order or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a sequence of stream tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t.wrapping_add(0x5151))))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, tags: &[u64]) -> Rng {
    rng_from_seed(derive_seed(seed, tags))
}

/// Stream tags used across the crate, so distinct subsystems never share draws.
pub mod stream {
    pub const PROPOSAL: u64 = 1;
    pub const SIMULATION: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const GUARD: u64 = 4;
    pub const INIT: u64 = 5;
    pub const OBSERVATION: u64 = 6;
    pub const COMPONENT: u64 = 7;
    pub const MCMC: u64 = 8;
    pub const ABC: u64 = 9;
    pub const NOISE: u64 = 10;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}
