//! Seeded random streams.
//!
//! Every consumer of randomness (split, shuffle, augmentation, dropout,
//! initialization) draws from its own ChaCha stream, keyed by the run seed
//! plus a list of tags. Streams never share state, so the order in which
//! work is executed cannot change what any of them produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    let mut key = splitmix64(seed);
    for &t in tags {
        key = splitmix64(key ^ splitmix64(t.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    key
}

/// Independent stream for `seed` and a path of tags.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, tags))
}
