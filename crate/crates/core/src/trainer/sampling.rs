//! Seeded per-batch sampling: BPR triples, IRM observations, environment
//! pairs and reparameterization noise.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::BehaviorMatrix;
use crate::losses::{IrmBatch, IrmSample};
pub use crate::rng::stream;

/// `(batch slot, positive item, negative item)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub slot: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Everything random about one optimization step, drawn up front so the
/// same plan can be replayed (finite differences, resumed runs).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub users: Vec<usize>,
    pub bpr: Vec<BprTriple>,
    pub irm: IrmBatch,
    /// `[slot][m]` standard normal draws of latent width. Empty for
    /// pretraining plans.
    pub eps: Vec<Vec<Vec<f64>>>,
    /// BPR over the union graph only; `P`, `Q` are the sole trainables.
    pub pretrain: bool,
}

pub(crate) const LANE_INIT: u64 = 0;
pub(crate) const LANE_SHUFFLE: u64 = 1;
pub(crate) const LANE_BATCH: u64 = 2;
pub(crate) const LANE_NOISE: u64 = 3;

/// Uniform item outside `user`'s row, or `None` if the row is full.
pub fn sample_negative<R: Rng + ?Sized>(matrix: &BehaviorMatrix, user: usize, num_items: usize, rng: &mut R) -> Option<usize> {
    let owned = matrix.user_items(user);
    if owned.len() >= num_items {
        return None;
    }
    if owned.len() * 2 <= num_items {
        loop {
            let i = rng.random_range(0..num_items);
            if owned.binary_search(&i).is_err() {
                return Some(i);
            }
        }
    }
    // Dense row: pick the r-th free id directly.
    let r = rng.random_range(0..num_items - owned.len());
    for (k, &o) in owned.iter().enumerate() {
        if r + k < o {
            return Some(r + k);
        }
    }
    Some(r + owned.len())
}

/// `neg_k` triples per user with at least one positive in `matrix`.
pub fn bpr_triples<R: Rng + ?Sized>(
    matrix: &BehaviorMatrix,
    users: &[usize],
    num_items: usize,
    neg_k: usize,
    rng: &mut R,
) -> Vec<BprTriple> {
    let mut out = Vec::with_capacity(users.len() * neg_k);
    for (slot, &u) in users.iter().enumerate() {
        let pos_items = matrix.user_items(u);
        if pos_items.is_empty() {
            continue;
        }
        for _ in 0..neg_k {
            let pos = pos_items[rng.random_range(0..pos_items.len())];
            if let Some(neg) = sample_negative(matrix, u, num_items, rng) {
                out.push(BprTriple { slot, pos, neg });
            }
        }
    }
    out
}

/// Per environment: one positive and `neg_k` negatives per user that has
/// interactions there.
pub fn irm_samples<R: Rng + ?Sized>(
    env_matrices: &[&BehaviorMatrix],
    users: &[usize],
    num_items: usize,
    neg_k: usize,
    pair_sample: Option<usize>,
    rng: &mut R,
) -> IrmBatch {
    let mut by_env = Vec::with_capacity(env_matrices.len());
    for matrix in env_matrices {
        let mut samples = Vec::new();
        for (slot, &u) in users.iter().enumerate() {
            let pos_items = matrix.user_items(u);
            if pos_items.is_empty() {
                continue;
            }
            let item = pos_items[rng.random_range(0..pos_items.len())];
            samples.push(IrmSample { slot, item, positive: true });
            for _ in 0..neg_k {
                if let Some(item) = sample_negative(matrix, u, num_items, rng) {
                    samples.push(IrmSample { slot, item, positive: false });
                }
            }
        }
        by_env.push(samples);
    }
    let all = IrmBatch::all_pairs(env_matrices.len());
    let pairs = match pair_sample {
        Some(n) if n < all.len() => {
            let mut picked = index::sample(rng, all.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| all[k]).collect()
        }
        _ => all,
    };
    IrmBatch { by_env, pairs }
}

pub fn noise<R: Rng + ?Sized>(slots: usize, envs: usize, latent: usize, rng: &mut R) -> Vec<Vec<Vec<f64>>> {
    (0..slots)
        .map(|_| {
            (0..envs)
                .map(|_| (0..latent).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(pairs: &[(usize, usize)], users: usize, items: usize) -> BehaviorMatrix {
        BehaviorMatrix::from_pairs(pairs.iter().copied(), users, items, [0].into())
    }

    #[test]
    fn negatives_avoid_positives() {
        let m = matrix(&[(0, 0), (0, 2), (0, 3), (0, 4), (1, 1)], 2, 6);
        let mut rng = stream(1, 0, 0, 0);
        for _ in 0..500 {
            let n = sample_negative(&m, 0, 6, &mut rng).unwrap();
            assert!(n == 1 || n == 5, "{n}");
            let n = sample_negative(&m, 1, 6, &mut rng).unwrap();
            assert_ne!(n, 1);
        }
        let full = matrix(&[(0, 0), (0, 1)], 1, 2);
        assert_eq!(sample_negative(&full, 0, 2, &mut rng), None);
    }

    #[test]
    fn dense_rows_cover_every_free_item() {
        let m = matrix(&[(0, 0), (0, 1), (0, 3), (0, 4), (0, 6)], 1, 8);
        let mut rng = stream(2, 0, 0, 0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..400 {
            seen.insert(sample_negative(&m, 0, 8, &mut rng).unwrap());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![2, 5, 7]);
    }

    #[test]
    fn triples_skip_users_without_positives() {
        let m = matrix(&[(0, 1), (2, 0)], 3, 4);
        let mut rng = stream(3, 0, 0, 0);
        let t = bpr_triples(&m, &[0, 1, 2], 4, 2, &mut rng);
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|x| x.slot != 1));
        assert!(t.iter().all(|x| m.contains(x.slot, x.pos) && !m.contains(x.slot, x.neg)));
    }

    #[test]
    fn pair_sampling() {
        let a = matrix(&[(0, 0)], 1, 3);
        let b = matrix(&[(0, 1)], 1, 3);
        let c = matrix(&[(0, 0), (0, 1)], 1, 3);
        let envs = [&a, &b, &c];
        let mut rng = stream(4, 0, 0, 0);
        let full = irm_samples(&envs, &[0], 3, 1, None, &mut rng);
        assert_eq!(full.pairs.len(), 9);
        assert_eq!(full.by_env[2].len(), 2);
        let some = irm_samples(&envs, &[0], 3, 1, Some(4), &mut rng);
        assert_eq!(some.pairs.len(), 4);
        let mut dedup = some.pairs.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 4);
    }
}
