// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeding conventions. Every random quantity in the crate is drawn from a
//! `ChaCha8Rng` built from an explicit 64-bit seed, so results never depend
//! on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of replication `index` under `base`.
pub fn replication_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

/// Decorrelated child seed for a named sub-task (splitmix64 finalizer).
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
