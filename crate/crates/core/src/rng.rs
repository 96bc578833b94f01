//! Seed derivation. Every random stream in the pipeline is a ChaCha8
//! generator keyed by the run seed plus a path of stream identifiers, so
//! per-sample randomness does not depend on visiting order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream identifiers used across modules.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT_VIT: u64 = 2;
    pub const INIT_CNN: u64 = 3;
    pub const INIT_HEAD: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const SYNTH: u64 = 7;
}
