//! Seed derivation and stable hashing.
//!
//! All randomness in the crate flows from a single user seed. Child seeds are
//! derived with a counter-based SplitMix64 chain: `derive(seed, &[a, b, c])`
//! mixes each path component in order, so a tree's seed depends only on
//! `(run seed, level, target, fold, tree)` and never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known path tags so unrelated streams never collide.
pub mod stream {
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const LEVEL1: u64 = 1;
    pub const LEVEL2: u64 = 2;
    pub const ORACLE: u64 = 0x4f52_434c;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` along `path`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// FNV-1a over the bytes of `s`, salted with `salt`. Stable across platforms
/// and releases, unlike `std::hash`.
pub fn stable_hash(s: &str, salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ splitmix64(salt);
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}
