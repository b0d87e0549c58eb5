//! Multi-behavior interaction logs, behavior matrices and evaluation splits.

mod io;

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use io::{load_interactions, read_split, write_interactions, write_split, IdMap, Schema};

/// One observed `(user, item, behavior)` event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub behavior: usize,
    /// Position in the log; strictly increasing across `records`.
    pub order: u64,
}

/// Raw multi-behavior history, records kept in ascending `order`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
    pub num_users: usize,
    pub num_items: usize,
    pub num_behaviors: usize,
}

impl InteractionLog {
    /// Builds a log from `(user, item, behavior)` triples, assigning order
    /// indices in slice order.
    pub fn from_triples(
        triples: &[(usize, usize, usize)],
        num_users: usize,
        num_items: usize,
        num_behaviors: usize,
    ) -> Result<Self> {
        let records = triples
            .iter()
            .enumerate()
            .map(|(n, &(user, item, behavior))| Interaction {
                user,
                item,
                behavior,
                order: n as u64,
            })
            .collect();
        let log = Self {
            records,
            num_users,
            num_items,
            num_behaviors,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        let mut last: Option<u64> = None;
        for r in &self.records {
            if r.user >= self.num_users || r.item >= self.num_items || r.behavior >= self.num_behaviors {
                return Err(Error::invalid(format!(
                    "record ({}, {}, {}) outside ({}, {}, {})",
                    r.user, r.item, r.behavior, self.num_users, self.num_items, self.num_behaviors
                )));
            }
            if last.is_some_and(|o| o >= r.order) {
                return Err(Error::invalid(format!(
                    "order index {} not strictly increasing",
                    r.order
                )));
            }
            last = Some(r.order);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn with_records(&self, records: Vec<Interaction>) -> Self {
        Self {
            records,
            num_users: self.num_users,
            num_items: self.num_items,
            num_behaviors: self.num_behaviors,
        }
    }

    fn check_behavior(&self, behavior: usize) -> Result<()> {
        if behavior >= self.num_behaviors {
            return Err(Error::invalid(format!(
                "target behavior {} out of range (behaviors: {})",
                behavior, self.num_behaviors
            )));
        }
        Ok(())
    }

    /// Per-user target-behavior records, each list in ascending order.
    fn target_records_by_user(&self, target: usize) -> Vec<Vec<Interaction>> {
        let mut by_user = vec![Vec::new(); self.num_users];
        for r in self.records.iter().filter(|r| r.behavior == target) {
            by_user[r.user].push(*r);
        }
        by_user
    }
}

/// Keeps only the first occurrence of every `(user, item, behavior)` key.
pub fn deduplicate(log: &InteractionLog) -> InteractionLog {
    let mut seen = HashSet::with_capacity(log.records.len());
    let records = log
        .records
        .iter()
        .filter(|r| seen.insert((r.user, r.item, r.behavior)))
        .copied()
        .collect();
    log.with_records(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    LeaveOneOut,
    ColdStart,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::LeaveOneOut => "leave-one-out",
            SplitMode::ColdStart => "cold-start",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "leave-one-out" | "loo" => Some(SplitMode::LeaveOneOut),
            "cold-start" => Some(SplitMode::ColdStart),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: InteractionLog,
    /// `(user, held_out_item)`, sorted by user, at most one entry per user.
    pub test: Vec<(usize, usize)>,
    pub target_behavior: usize,
    pub mode: SplitMode,
}

/// Holds out the last target-behavior interaction of every user that has at
/// least two of them. Users with fewer stay entirely in train.
pub fn leave_one_out_split(log: &InteractionLog, target_behavior: usize) -> Result<SplitBundle> {
    log.check_behavior(target_behavior)?;
    let mut test = Vec::new();
    let mut held_out = HashSet::new();
    for (user, recs) in log.target_records_by_user(target_behavior).iter().enumerate() {
        if recs.len() >= 2 {
            let last = recs.iter().max_by_key(|r| r.order).expect("non-empty");
            test.push((user, last.item));
            held_out.insert((user, last.item));
        }
    }
    let records = log
        .records
        .iter()
        .filter(|r| !(r.behavior == target_behavior && held_out.contains(&(r.user, r.item))))
        .copied()
        .collect();
    Ok(SplitBundle {
        train: log.with_records(records),
        test,
        target_behavior,
        mode: SplitMode::LeaveOneOut,
    })
}

/// Samples `n_users` users with target history and strips it from train.
///
/// Each sampled user's last target item becomes the test pair, and that
/// `(user, item)` pair is also removed from every auxiliary behavior.
pub fn cold_start_split(
    log: &InteractionLog,
    target_behavior: usize,
    n_users: usize,
    seed: u64,
) -> Result<SplitBundle> {
    log.check_behavior(target_behavior)?;
    let by_user = log.target_records_by_user(target_behavior);
    let eligible: Vec<usize> = (0..log.num_users).filter(|&u| !by_user[u].is_empty()).collect();
    if eligible.len() < n_users {
        return Err(Error::InsufficientUsers {
            needed: n_users,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, eligible.len(), n_users)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    chosen.sort_unstable();

    let cold: HashSet<usize> = chosen.iter().copied().collect();
    let mut test = Vec::with_capacity(chosen.len());
    let mut removed_pairs = HashSet::new();
    for &u in &chosen {
        let last = by_user[u].iter().max_by_key(|r| r.order).expect("eligible");
        test.push((u, last.item));
        removed_pairs.insert((u, last.item));
    }
    let records = log
        .records
        .iter()
        .filter(|r| {
            let cold_target = r.behavior == target_behavior && cold.contains(&r.user);
            !cold_target && !removed_pairs.contains(&(r.user, r.item))
        })
        .copied()
        .collect();
    Ok(SplitBundle {
        train: log.with_records(records),
        test,
        target_behavior,
        mode: SplitMode::ColdStart,
    })
}

/// Sparse binary user-item incidence for a union of behaviors, stored as
/// per-user sorted item lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorMatrix {
    behaviors: BTreeSet<usize>,
    num_users: usize,
    num_items: usize,
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl BehaviorMatrix {
    /// Builds from arbitrary (possibly repeated) pairs.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        num_users: usize,
        num_items: usize,
        behaviors: BTreeSet<usize>,
    ) -> Self {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; num_users + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for u in 0..num_users {
            offsets[u + 1] += offsets[u];
        }
        let items = pairs.into_iter().map(|(_, i)| i).collect();
        Self {
            behaviors,
            num_users,
            num_items,
            offsets,
            items,
        }
    }

    pub fn behaviors(&self) -> &BTreeSet<usize> {
        &self.behaviors
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn nnz(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of `user`, ascending.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.items[self.offsets[user]..self.offsets[user + 1]]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        user < self.num_users && self.user_items(user).binary_search(&item).is_ok()
    }

    /// All pairs in `(user, item)` ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.user_items(u).iter().map(move |&i| (u, i)))
    }

    pub fn pair_set(&self) -> BTreeSet<(usize, usize)> {
        self.pairs().collect()
    }
}

/// Union over the selected behaviors of the distinct `(user, item)` pairs.
pub fn build_matrix(log: &InteractionLog, behaviors: &[usize]) -> Result<BehaviorMatrix> {
    if behaviors.is_empty() {
        return Err(Error::invalid("behavior subset must be non-empty"));
    }
    let subset: BTreeSet<usize> = behaviors.iter().copied().collect();
    if let Some(&b) = subset.iter().find(|&&b| b >= log.num_behaviors) {
        return Err(Error::invalid(format!("behavior {b} out of range")));
    }
    let pairs = log
        .records
        .iter()
        .filter(|r| subset.contains(&r.behavior))
        .map(|r| (r.user, r.item))
        .collect::<Vec<_>>();
    Ok(BehaviorMatrix::from_pairs(pairs, log.num_users, log.num_items, subset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log(triples: &[(usize, usize, usize)], u: usize, i: usize, k: usize) -> InteractionLog {
        InteractionLog::from_triples(triples, u, i, k).unwrap()
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        // (u1,i1,click,#1), filler, (u1,i1,click,#5)
        let l = log(&[(1, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 0), (1, 1, 0)], 2, 2, 2);
        let d = deduplicate(&l);
        let hits: Vec<_> = d.records.iter().filter(|r| (r.user, r.item, r.behavior) == (1, 1, 0)).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].order, 0);
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn dedup_identity_without_duplicates() {
        let l = log(&[(0, 0, 0), (0, 1, 0), (1, 0, 1)], 2, 2, 2);
        assert_eq!(deduplicate(&l), l);
    }

    #[test]
    fn dedup_key_includes_behavior() {
        let l = log(&[(0, 0, 0), (0, 0, 1)], 1, 1, 2);
        assert_eq!(deduplicate(&l).len(), 2);
    }

    #[test]
    fn leave_one_out_holds_out_last() {
        let l = log(&[(0, 1, 0), (0, 2, 0), (0, 3, 0)], 1, 4, 1);
        let s = leave_one_out_split(&l, 0).unwrap();
        assert_eq!(s.test, vec![(0, 3)]);
        let train: Vec<usize> = s.train.records.iter().map(|r| r.item).collect();
        assert_eq!(train, vec![1, 2]);
    }

    #[test]
    fn leave_one_out_skips_short_histories() {
        // user 0: one target item; user 1: only auxiliary
        let l = log(&[(0, 1, 1), (1, 0, 0), (1, 2, 0)], 2, 3, 2);
        let s = leave_one_out_split(&l, 1).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train, l);
    }

    #[test]
    fn leave_one_out_uses_order_not_item_id() {
        let l = log(&[(0, 5, 0), (0, 2, 0)], 1, 6, 1);
        let s = leave_one_out_split(&l, 0).unwrap();
        assert_eq!(s.test, vec![(0, 2)]);
    }

    #[test]
    fn split_rejects_bad_target() {
        let l = log(&[(0, 0, 0)], 1, 1, 1);
        assert!(leave_one_out_split(&l, 1).is_err());
        assert!(cold_start_split(&l, 3, 1, 0).is_err());
    }

    #[test]
    fn cold_start_single_user() {
        let l = log(&[(0, 0, 0), (0, 1, 1), (0, 2, 1), (0, 2, 0)], 1, 3, 2);
        let s = cold_start_split(&l, 1, 1, 7).unwrap();
        assert_eq!(s.test, vec![(0, 2)]);
        assert!(s.train.records.iter().all(|r| r.behavior != 1));
        // held-out pair also leaves the auxiliary behavior
        assert!(!s.train.records.iter().any(|r| (r.user, r.item) == (0, 2)));
        assert!(s.train.records.iter().any(|r| (r.user, r.item) == (0, 0)));
        assert_eq!(s.mode, SplitMode::ColdStart);
    }

    #[test]
    fn cold_start_is_seeded() {
        let triples: Vec<_> = (0..50).flat_map(|u| [(u, u % 7, 1), (u, (u + 1) % 7, 0)]).collect();
        let l = log(&triples, 50, 7, 2);
        let a = cold_start_split(&l, 1, 10, 42).unwrap();
        let b = cold_start_split(&l, 1, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = cold_start_split(&l, 1, 10, 43).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn cold_start_insufficient_users() {
        let l = log(&[(0, 0, 1), (1, 0, 0)], 2, 1, 2);
        match cold_start_split(&l, 1, 2, 0) {
            Err(Error::InsufficientUsers { needed: 2, available: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn build_matrix_union_and_collapse() {
        let l = log(&[(0, 0, 0), (0, 1, 1)], 1, 2, 2);
        let m = build_matrix(&l, &[0, 1]).unwrap();
        assert_eq!(m.pair_set(), [(0, 0), (0, 1)].into_iter().collect());
        let single = build_matrix(&l, &[1]).unwrap();
        assert_eq!(single.pair_set(), [(0, 1)].into_iter().collect());

        let l = log(&[(0, 0, 0), (0, 0, 1)], 1, 1, 2);
        assert_eq!(build_matrix(&l, &[0, 1]).unwrap().nnz(), 1);
        assert!(build_matrix(&l, &[]).is_err());
        assert!(build_matrix(&l, &[2]).is_err());
    }

    #[test]
    fn matrix_membership_is_exact() {
        let l = log(&[(0, 2, 0), (1, 0, 0)], 2, 3, 1);
        let m = build_matrix(&l, &[0]).unwrap();
        assert!(m.contains(0, 2));
        assert!(!m.contains(0, 0));
        assert!(m.contains(1, 0));
        assert!(!m.contains(5, 0));
    }

    fn arb_log() -> impl Strategy<Value = InteractionLog> {
        prop::collection::vec((0usize..6, 0usize..8, 0usize..3), 0..60)
            .prop_map(|t| InteractionLog::from_triples(&t, 6, 8, 3).unwrap())
    }

    proptest! {
        #[test]
        fn dedup_idempotent(l in arb_log()) {
            let once = deduplicate(&l);
            prop_assert_eq!(deduplicate(&once), once);
        }

        #[test]
        fn loo_disjoint_and_reconstructs(l in arb_log()) {
            let l = deduplicate(&l);
            let s = leave_one_out_split(&l, 2).unwrap();
            let train: HashSet<_> = s.train.records.iter()
                .filter(|r| r.behavior == 2).map(|r| (r.user, r.item)).collect();
            let mut seen = HashSet::new();
            for &(u, i) in &s.test {
                prop_assert!(seen.insert(u));
                prop_assert!(!train.contains(&(u, i)));
            }
            let tested: HashSet<usize> = s.test.iter().map(|t| t.0).collect();
            let original: HashSet<_> = l.records.iter()
                .filter(|r| r.behavior == 2 && tested.contains(&r.user))
                .map(|r| (r.user, r.item)).collect();
            let rebuilt: HashSet<_> = train.iter().filter(|p| tested.contains(&p.0)).copied()
                .chain(s.test.iter().copied()).collect();
            prop_assert_eq!(original, rebuilt);
        }

        #[test]
        fn matrix_union_distributes(l in arb_log()) {
            let ab = build_matrix(&l, &[0, 1]).unwrap().pair_set();
            let a = build_matrix(&l, &[0]).unwrap().pair_set();
            let b = build_matrix(&l, &[1]).unwrap().pair_set();
            prop_assert_eq!(ab, a.union(&b).copied().collect());
        }
    }
}
