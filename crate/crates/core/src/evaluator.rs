//! Leave-one-out ranking metrics over all non-excluded items.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_matrix, BehaviorMatrix, InteractionLog, SplitBundle};
use crate::error::{Error, Result};
use crate::recommender::{rank_order, ScoringState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub hr: f64,
    pub ndcg: f64,
    pub k: usize,
    pub n_users: usize,
}

/// Which training interactions remove items from a user's candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExclusionPolicy {
    /// Only the user's target-behavior training items.
    #[default]
    TargetOnly,
    /// Every training item of the user, under any behavior.
    AllBehaviors,
}

impl ExclusionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionPolicy::TargetOnly => "target",
            ExclusionPolicy::AllBehaviors => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" => Some(ExclusionPolicy::TargetOnly),
            "all" => Some(ExclusionPolicy::AllBehaviors),
            _ => None,
        }
    }

    pub fn matrix(self, train: &InteractionLog, target: usize) -> Result<BehaviorMatrix> {
        match self {
            ExclusionPolicy::TargetOnly => build_matrix(train, &[target]),
            ExclusionPolicy::AllBehaviors => {
                let all: Vec<usize> = (0..train.num_behaviors).collect();
                build_matrix(train, &all)
            }
        }
    }
}

/// 1-based position of `held_out` among non-excluded items, ties broken by
/// ascending item id. `exclude` must be sorted.
pub fn rank_of(held_out: usize, scores: &[f64], exclude: &[usize]) -> Result<usize> {
    if held_out >= scores.len() {
        return Err(Error::invalid(format!("held-out item {held_out} outside {} items", scores.len())));
    }
    if exclude.binary_search(&held_out).is_ok() {
        return Err(Error::invalid(format!("held-out item {held_out} is excluded from candidates")));
    }
    let target = (held_out, scores[held_out]);
    let mut ex = exclude.iter().peekable();
    let mut above = 0;
    for (i, &s) in scores.iter().enumerate() {
        while ex.peek().is_some_and(|&&e| e < i) {
            ex.next();
        }
        if ex.peek() == Some(&&i) {
            continue;
        }
        if rank_order((i, s), target).is_lt() {
            above += 1;
        }
    }
    Ok(above + 1)
}

/// HR@K and NDCG@K (gain `1 / log2(rank + 1)`) averaged over `ranks`.
pub fn hr_ndcg_at_k(ranks: &[usize], k: usize) -> Result<EvalResult> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if ranks.is_empty() {
        return Err(Error::invalid("no ranks to aggregate"));
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks are 1-based"));
    }
    let (mut hits, mut gain) = (0usize, 0.0);
    for &r in ranks {
        if r <= k {
            hits += 1;
            gain += 1.0 / ((r + 1) as f64).log2();
        }
    }
    let n = ranks.len() as f64;
    Ok(EvalResult {
        hr: hits as f64 / n,
        ndcg: gain / n,
        k,
        n_users: ranks.len(),
    })
}

/// Ranks every test user's held-out item against all items minus the
/// user's excluded training items (the held-out item itself always stays a
/// candidate).
pub fn evaluate(split: &SplitBundle, state: &ScoringState, k: usize, policy: ExclusionPolicy) -> Result<EvalResult> {
    let ranks = test_ranks(split, state, policy)?;
    hr_ndcg_at_k(&ranks, k)
}

pub fn test_ranks(split: &SplitBundle, state: &ScoringState, policy: ExclusionPolicy) -> Result<Vec<usize>> {
    if split.test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let excl = policy.matrix(&split.train, split.target_behavior)?;
    split
        .test
        .par_iter()
        .map(|&(u, held_out)| {
            let scores = state.user_scores(u)?;
            let exclude: Vec<usize> = excl.user_items(u).iter().copied().filter(|&i| i != held_out).collect();
            rank_of(held_out, &scores, &exclude)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InteractionLog, SplitMode};
    use crate::tensor::EmbeddingTable;

    #[test]
    fn rank_cases() {
        assert_eq!(rank_of(2, &[0.1, 0.5, 0.9], &[]).unwrap(), 1);
        // items 0 and 1 tie with the held-out 2, both precede it by id
        assert_eq!(rank_of(2, &[0.5, 0.5, 0.5], &[]).unwrap(), 3);
        assert_eq!(rank_of(0, &[0.5, 0.5, 0.5], &[]).unwrap(), 1);
        assert_eq!(rank_of(2, &[0.5, 0.9, 0.5], &[1]).unwrap(), 2);
        assert!(rank_of(1, &[0.5, 0.9], &[1]).is_err());
    }

    #[test]
    fn metric_cases() {
        let r = hr_ndcg_at_k(&[1], 10).unwrap();
        assert_eq!((r.hr, r.ndcg), (1.0, 1.0));
        let r = hr_ndcg_at_k(&[3], 10).unwrap();
        assert_eq!(r.ndcg, 0.5);
        let r = hr_ndcg_at_k(&[11], 10).unwrap();
        assert_eq!((r.hr, r.ndcg), (0.0, 0.0));
        assert!(hr_ndcg_at_k(&[1], 0).is_err());
        assert!(hr_ndcg_at_k(&[0], 5).is_err());
    }

    fn split(test: Vec<(usize, usize)>, users: usize, items: usize) -> SplitBundle {
        SplitBundle {
            train: InteractionLog::from_triples(&[], users, items, 1).unwrap(),
            test,
            target_behavior: 0,
            mode: SplitMode::LeaveOneOut,
        }
    }

    #[test]
    fn uniform_zero_scores_give_exact_tenth() {
        // user u holds out item u; zero scores rank by id, so only ids < 10 hit
        let state = ScoringState::dot_product(EmbeddingTable::zeros(100, 4), EmbeddingTable::zeros(100, 4)).unwrap();
        let r = evaluate(&split((0..100).map(|u| (u, u)).collect(), 100, 100), &state, 10, ExclusionPolicy::TargetOnly)
            .unwrap();
        assert_eq!(r.hr, 0.1);
        assert_eq!(r.n_users, 100);
    }

    #[test]
    fn oracle_state_is_perfect() {
        // item i's embedding is e_i; user u's vector is e_{held(u)}
        let held = [2usize, 0, 3];
        let mut users = EmbeddingTable::zeros(3, 4);
        for (u, &h) in held.iter().enumerate() {
            users.row_mut(u)[h] = 1.0;
        }
        let mut items = EmbeddingTable::zeros(4, 4);
        for i in 0..4 {
            items.row_mut(i)[i] = 1.0;
        }
        let state = ScoringState::dot_product(users, items).unwrap();
        let s = split(held.iter().enumerate().map(|(u, &h)| (u, h)).collect(), 3, 4);
        let r = evaluate(&s, &state, 1, ExclusionPolicy::TargetOnly).unwrap();
        assert_eq!((r.hr, r.ndcg), (1.0, 1.0));
    }

    #[test]
    fn empty_test_set_errors() {
        let state = ScoringState::dot_product(EmbeddingTable::zeros(1, 4), EmbeddingTable::zeros(1, 4)).unwrap();
        assert!(evaluate(&split(vec![], 1, 1), &state, 10, ExclusionPolicy::TargetOnly).is_err());
    }

    #[test]
    fn exclusion_policies() {
        let train = InteractionLog::from_triples(&[(0, 0, 0), (0, 1, 1)], 1, 4, 2).unwrap();
        let scores = EmbeddingTable::from_rows(&[vec![4.0], vec![3.0], vec![2.0], vec![1.0]]).unwrap();
        let state = ScoringState::dot_product(EmbeddingTable::from_rows(&[vec![1.0]]).unwrap(), scores).unwrap();
        let s = SplitBundle {
            train,
            test: vec![(0, 2)],
            target_behavior: 1,
            mode: SplitMode::LeaveOneOut,
        };
        // target-only excludes item 1; item 0 (auxiliary only) stays a candidate
        assert_eq!(test_ranks(&s, &state, ExclusionPolicy::TargetOnly).unwrap(), vec![2]);
        assert_eq!(test_ranks(&s, &state, ExclusionPolicy::AllBehaviors).unwrap(), vec![1]);
    }
}
