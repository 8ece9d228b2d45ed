//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng` keyed by
//! a 64-bit seed obtained from a master seed and a stream counter, so that
//! parallel work units draw from independent, reproducible streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used by the training code. Values are part of the
/// reproducibility contract; do not renumber.
pub mod stream {
    pub const SUBSAMPLE_RUN: u64 = 0x0100;
    pub const FINAL_RUN: u64 = 0x0200;
    pub const CV_FOLDS: u64 = 0x0300;
    pub const CV_TRAINING: u64 = 0x0400;
    pub const SPLIT: u64 = 0x0500;
    pub const INIT: u64 = 0x0600;
    pub const SHUFFLE: u64 = 0x0700;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `(tag, index)` under `master`.
pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag.wrapping_mul(0x1_0000_0001) ^ splitmix64(index)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tag: u64, index: u64) -> Rng {
    rng(derive(master, tag, index))
}
