//! Splittable seeding: every random draw comes from a generator keyed by
//! `(seed, a, b, lane)`, so work can be reordered or resumed without
//! changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, a, b, lane)`.
pub fn stream(seed: u64, a: u64, b: u64, lane: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for part in [a, b, lane] {
        h = splitmix64(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}
