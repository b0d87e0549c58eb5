#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mbrec::dataset::InteractionLog;

/// Random log where every user has at least `min_target` target
/// interactions and one interaction per auxiliary behavior.
pub fn random_log(users: usize, items: usize, behaviors: usize, per_user: usize, min_target: usize, seed: u64) -> InteractionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = behaviors - 1;
    let mut triples = Vec::new();
    for u in 0..users {
        for b in 0..behaviors {
            let n = if b == target { min_target.max(1) } else { 1 };
            for _ in 0..n {
                triples.push((u, rng.random_range(0..items), b));
            }
        }
        for _ in 0..per_user {
            triples.push((u, rng.random_range(0..items), rng.random_range(0..behaviors)));
        }
    }
    InteractionLog::from_triples(&triples, users, items, behaviors).unwrap()
}

pub mod oracles;
pub mod runs;
