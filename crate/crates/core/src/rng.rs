//! Deterministic seed derivation.
//!
//! Every evaluation gets its own ChaCha stream whose seed is a pure function
//! of the run seed and the evaluation's lineage, so results do not depend on
//! the order in which evaluations are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const STREAM_OPERATORS: u64 = 1;
pub const STREAM_MAIN: u64 = 2;
pub const STREAM_FUZZ: u64 = 3;
pub const STREAM_RANDOM: u64 = 4;
pub const STREAM_INIT: u64 = 5;
pub const STREAM_RUN: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a lineage path into a new 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
