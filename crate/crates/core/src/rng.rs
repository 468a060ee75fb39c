//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a stream derived from the run
//! seed plus a path of labels (batch index, pair index, setting, ...). No
//! stream depends on scheduling, so results are identical for any number
//! of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a label path into a new 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> RngStream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}

/// Label namespaces, so streams for different purposes never collide.
pub mod label {
    pub const BATCH: u64 = 1;
    pub const CONFUSION: u64 = 2;
    pub const SPSA: u64 = 3;
    pub const MGD: u64 = 4;
    pub const REPEAT: u64 = 5;
    pub const EXPERIMENT: u64 = 6;
}
