//! Independent reference implementations: dense matrix propagation and a
//! brute-force full-sort evaluator.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mbrec::dataset::{BehaviorMatrix, InteractionLog, SplitBundle, SplitMode};
use mbrec::evaluator::{evaluate, EvalResult, ExclusionPolicy};
use mbrec::graph::{build_graph, propagate};
use mbrec::recommender::ScoringState;
use mbrec::tensor::EmbeddingTable;

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| row.iter().zip(b).map(|(x, br)| x * br[c]).sum())
                .collect()
        })
        .collect()
}

/// Largest absolute gap between the sparse propagation layers (and their
/// sum) and `A^l E` with `A` the dense normalized bipartite adjacency, on a
/// random graph of at most 20 nodes.
pub fn dense_propagation_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.random_range(1..=10);
    let items = rng.random_range(1..=10);
    let density = rng.random_range(0.05..0.7);
    let pairs: Vec<(usize, usize)> = (0..users)
        .flat_map(|u| (0..items).map(move |i| (u, i)))
        .filter(|_| rng.random_bool(density))
        .collect();
    let dim = rng.random_range(1..=4);
    let layers = rng.random_range(0..=4);

    let n = users + items;
    let mut deg = vec![0.0f64; n];
    for &(u, i) in &pairs {
        deg[u] += 1.0;
        deg[users + i] += 1.0;
    }
    let mut adj = vec![vec![0.0; n]; n];
    for &(u, i) in &pairs {
        let w = 1.0 / (deg[u] * deg[users + i]).sqrt();
        adj[u][users + i] = w;
        adj[users + i][u] = w;
    }

    let p = EmbeddingTable::random_normal(users, dim, 1.0, &mut rng);
    let q = EmbeddingTable::random_normal(items, dim, 1.0, &mut rng);
    let mut e: Vec<Vec<f64>> = (0..users).map(|u| p.row(u).to_vec()).chain((0..items).map(|i| q.row(i).to_vec())).collect();

    let matrix = BehaviorMatrix::from_pairs(pairs, users, items, BTreeSet::from([0]));
    let graph = build_graph(&matrix, users, items).unwrap();
    let stack = propagate(&graph, &p, &q, layers).unwrap();
    let (sum_u, sum_i) = graph.layer_sum(&p, &q, layers).unwrap();

    let mut gap = 0.0f64;
    let mut dense_sum = e.clone();
    for l in 0..=layers {
        if l > 0 {
            e = matmul(&adj, &e);
            for (s, r) in dense_sum.iter_mut().zip(&e) {
                s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
        }
        for u in 0..users {
            gap = gap.max(max_abs_diff(stack.users[l].row(u), &e[u]));
        }
        for i in 0..items {
            gap = gap.max(max_abs_diff(stack.items[l].row(i), &e[users + i]));
        }
    }
    for u in 0..users {
        gap = gap.max(max_abs_diff(sum_u.row(u), &dense_sum[u]));
    }
    for i in 0..items {
        gap = gap.max(max_abs_diff(sum_i.row(i), &dense_sum[users + i]));
    }
    gap
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One random evaluation problem: a score table, a split and a policy.
pub struct EvalCase {
    pub scores: Vec<Vec<f64>>,
    pub split: SplitBundle,
    pub policy: ExclusionPolicy,
}

impl EvalCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = rng.random_range(1..=50);
        let items = rng.random_range(2..=100);
        let behaviors = rng.random_range(1..=3);
        let target = behaviors - 1;
        // coarse levels force many ties
        let levels = rng.random_range(2..=30);
        let scores: Vec<Vec<f64>> = (0..users)
            .map(|_| (0..items).map(|_| rng.random_range(0..levels) as f64 * 0.25 - 1.0).collect())
            .collect();
        let mut triples = Vec::new();
        let mut test = Vec::new();
        for u in 0..users {
            for i in 0..items {
                for b in 0..behaviors {
                    if rng.random_bool(0.15) {
                        triples.push((u, i, b));
                    }
                }
            }
            if rng.random_bool(0.8) {
                test.push((u, rng.random_range(0..items)));
            }
        }
        if test.is_empty() {
            test.push((0, 0));
        }
        let policy = if rng.random_bool(0.5) { ExclusionPolicy::TargetOnly } else { ExclusionPolicy::AllBehaviors };
        let train = InteractionLog::from_triples(&triples, users, items, behaviors).unwrap();
        Self {
            scores,
            split: SplitBundle {
                train,
                test,
                target_behavior: target,
                mode: SplitMode::LeaveOneOut,
            },
            policy,
        }
    }

    /// Scores reproduced exactly: user rows hold the scores, item rows are
    /// one-hot.
    pub fn state(&self) -> ScoringState {
        let items = self.scores[0].len();
        let identity: Vec<Vec<f64>> = (0..items).map(|i| (0..items).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        ScoringState::dot_product(
            EmbeddingTable::from_rows(&self.scores).unwrap(),
            EmbeddingTable::from_rows(&identity).unwrap(),
        )
        .unwrap()
    }

    /// Full sort of every candidate, then a linear scan for the held-out item.
    pub fn brute_force(&self, k: usize) -> (f64, f64) {
        let t = &self.split.train;
        let excluded: BTreeSet<(usize, usize)> = t
            .records
            .iter()
            .filter(|r| self.policy == ExclusionPolicy::AllBehaviors || r.behavior == self.split.target_behavior)
            .map(|r| (r.user, r.item))
            .collect();
        let (mut hits, mut gain) = (0.0, 0.0);
        for &(u, held) in &self.split.test {
            let mut cands: Vec<(usize, f64)> = (0..t.num_items)
                .filter(|&i| i == held || !excluded.contains(&(u, i)))
                .map(|i| (i, self.scores[u][i]))
                .collect();
            cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let rank = cands.iter().position(|&(i, _)| i == held).unwrap() + 1;
            if rank <= k {
                hits += 1.0;
                gain += 1.0 / ((rank + 1) as f64).log2();
            }
        }
        let n = self.split.test.len() as f64;
        (hits / n, gain / n)
    }

    pub fn evaluate(&self, k: usize) -> EvalResult {
        evaluate(&self.split, &self.state(), k, self.policy).unwrap()
    }
}

/// Whether the evaluator and the brute-force oracle agree bit for bit.
pub fn evaluator_matches_brute_force(seed: u64, k: usize) -> bool {
    let case = EvalCase::random(seed);
    let got = case.evaluate(k);
    let (hr, ndcg) = case.brute_force(k);
    got.hr == hr && got.ndcg == ndcg
}
