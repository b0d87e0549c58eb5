//! Environment augmentation: every non-empty union of behavior matrices is a
//! training environment, each with its own propagated user/item tables.

use rayon::prelude::*;

use crate::dataset::BehaviorMatrix;
use crate::error::{Error, Result};
use crate::graph::{build_graph, PropagationGraph};
use crate::tensor::EmbeddingTable;

/// Largest behavior count accepted; 2^16 - 1 environments is already far
/// past anything trainable.
pub const MAX_BEHAVIORS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvironmentSet {
    environments: Vec<Vec<usize>>,
    num_behaviors: usize,
}

/// All non-empty behavior subsets, ordered by size then lexicographically.
/// The first `K` entries are the singletons `{0}, {1}, ..`.
pub fn enumerate_environments(num_behaviors: usize) -> Result<EnvironmentSet> {
    if num_behaviors == 0 {
        return Err(Error::invalid("at least one behavior is required"));
    }
    if num_behaviors > MAX_BEHAVIORS {
        return Err(Error::invalid(format!(
            "{num_behaviors} behaviors exceeds the supported maximum of {MAX_BEHAVIORS}"
        )));
    }
    let mut environments: Vec<Vec<usize>> = (1u32..(1 << num_behaviors))
        .map(|mask| (0..num_behaviors).filter(|b| mask & (1 << b) != 0).collect())
        .collect();
    environments.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(EnvironmentSet {
        environments,
        num_behaviors,
    })
}

impl EnvironmentSet {
    pub fn len(&self) -> usize {
        self.environments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.environments.is_empty()
    }

    pub fn num_behaviors(&self) -> usize {
        self.num_behaviors
    }

    pub fn environments(&self) -> &[Vec<usize>] {
        &self.environments
    }

    pub fn get(&self, m: usize) -> &[usize] {
        &self.environments[m]
    }

    /// Index of the environment made of `behavior` alone.
    pub fn singleton_index(&self, behavior: usize) -> Option<usize> {
        (behavior < self.num_behaviors).then_some(behavior)
    }

    pub fn is_singleton(&self, m: usize) -> bool {
        m < self.num_behaviors
    }
}

/// Per-environment interaction matrices and their graphs, built once since
/// interaction sets do not change during training.
#[derive(Debug, Clone)]
pub struct EnvironmentGraphs {
    set: EnvironmentSet,
    matrices: Vec<BehaviorMatrix>,
    graphs: Vec<PropagationGraph>,
}

impl EnvironmentGraphs {
    /// `behaviors[k]` is the matrix of behavior `k`.
    pub fn build(set: &EnvironmentSet, behaviors: &[BehaviorMatrix]) -> Result<Self> {
        if behaviors.len() != set.num_behaviors() {
            return Err(Error::invalid(format!(
                "{} behavior matrices for {} behaviors",
                behaviors.len(),
                set.num_behaviors()
            )));
        }
        let (num_users, num_items) = (behaviors[0].num_users(), behaviors[0].num_items());
        let matrices: Vec<BehaviorMatrix> = set
            .environments()
            .iter()
            .map(|subset| {
                let pairs = subset.iter().flat_map(|&b| behaviors[b].pairs());
                BehaviorMatrix::from_pairs(pairs, num_users, num_items, subset.iter().copied().collect())
            })
            .collect();
        let graphs = matrices
            .par_iter()
            .map(|m| build_graph(m, num_users, num_items))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            set: set.clone(),
            matrices,
            graphs,
        })
    }

    pub fn set(&self) -> &EnvironmentSet {
        &self.set
    }

    pub fn matrix(&self, m: usize) -> &BehaviorMatrix {
        &self.matrices[m]
    }

    pub fn graph(&self, m: usize) -> &PropagationGraph {
        &self.graphs[m]
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Propagates `(p_pt, q_pt)` through every environment graph.
    pub fn representations(
        &self,
        p_pt: &EmbeddingTable,
        q_pt: &EmbeddingTable,
        layers: usize,
    ) -> Result<EnvironmentRepresentations> {
        let outs = self
            .graphs
            .par_iter()
            .map(|g| g.layer_sum(p_pt, q_pt, layers))
            .collect::<Result<Vec<_>>>()?;
        let (users, items) = outs.into_iter().unzip();
        Ok(EnvironmentRepresentations { users, items })
    }

    /// Adjoint of [`Self::representations`]: folds per-environment gradients
    /// back onto `(p_pt, q_pt)`. Environments are summed in index order.
    pub fn backward(
        &self,
        grad_users: &[EmbeddingTable],
        grad_items: &[EmbeddingTable],
        layers: usize,
    ) -> Result<(EmbeddingTable, EmbeddingTable)> {
        let outs = self
            .graphs
            .par_iter()
            .zip(grad_users.par_iter().zip(grad_items.par_iter()))
            .map(|(g, (gu, gi))| g.layer_sum(gu, gi, layers))
            .collect::<Result<Vec<_>>>()?;
        let mut it = outs.into_iter();
        let (mut gu, mut gi) = it.next().ok_or_else(|| Error::invalid("no environments"))?;
        for (u, i) in it {
            gu.add_assign(&u)?;
            gi.add_assign(&i)?;
        }
        Ok((gu, gi))
    }
}

/// `users[m]` / `items[m]` hold the tables of environment `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentRepresentations {
    pub users: Vec<EmbeddingTable>,
    pub items: Vec<EmbeddingTable>,
}

pub fn environment_representations(
    set: &EnvironmentSet,
    behaviors: &[BehaviorMatrix],
    p_pt: &EmbeddingTable,
    q_pt: &EmbeddingTable,
    layers: usize,
) -> Result<EnvironmentRepresentations> {
    EnvironmentGraphs::build(set, behaviors)?.representations(p_pt, q_pt, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_matrix, InteractionLog};
    use crate::graph::{aggregate_layers, propagate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_behaviors() {
        let set = enumerate_environments(2).unwrap();
        assert_eq!(set.environments(), &[vec![0], vec![1], vec![0, 1]]);
    }

    #[test]
    fn counts_and_singletons_first() {
        for k in 1..=6 {
            let set = enumerate_environments(k).unwrap();
            assert_eq!(set.len(), (1 << k) - 1);
            for b in 0..k {
                assert_eq!(set.get(b), &[b]);
                assert_eq!(set.singleton_index(b), Some(b));
            }
            let mut uniq = set.environments().to_vec();
            uniq.dedup();
            assert_eq!(uniq.len(), set.len());
        }
        assert_eq!(enumerate_environments(3).unwrap().get(6), &[0, 1, 2]);
        assert!(enumerate_environments(0).is_err());
    }

    #[test]
    fn empty_environment_keeps_input() {
        let log = InteractionLog::from_triples(&[(0, 0, 0)], 2, 2, 2).unwrap();
        let mats = vec![build_matrix(&log, &[0]).unwrap(), build_matrix(&log, &[1]).unwrap()];
        let set = enumerate_environments(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = EmbeddingTable::random_normal(2, 4, 1.0, &mut rng);
        let q = EmbeddingTable::random_normal(2, 4, 1.0, &mut rng);
        let reps = environment_representations(&set, &mats, &p, &q, 2).unwrap();
        assert_eq!(reps.users[1], p);
        assert_eq!(reps.items[1], q);
        assert_eq!(reps.users.len(), 3);
    }

    #[test]
    fn singleton_equal_to_union_reproduces_pretraining_pass() {
        // behavior 1 covers every pair of behavior 0
        let log =
            InteractionLog::from_triples(&[(0, 0, 0), (0, 0, 1), (1, 1, 1), (1, 2, 1), (0, 2, 1)], 2, 3, 2).unwrap();
        let mats = vec![build_matrix(&log, &[0]).unwrap(), build_matrix(&log, &[1]).unwrap()];
        let union = build_matrix(&log, &[0, 1]).unwrap();
        let g0 = crate::graph::build_graph(&union, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = EmbeddingTable::random_normal(2, 4, 1.0, &mut rng);
        let q = EmbeddingTable::random_normal(3, 4, 1.0, &mut rng);
        let stack = propagate(&g0, &p, &q, 2).unwrap();
        let (pp, qp) = (aggregate_layers(&stack.users).unwrap(), aggregate_layers(&stack.items).unwrap());
        let set = enumerate_environments(2).unwrap();
        let reps = environment_representations(&set, &mats, &pp, &qp, 2).unwrap();
        let rerun = g0.layer_sum(&pp, &qp, 2).unwrap();
        assert_eq!(reps.users[1], rerun.0);
        assert_eq!(reps.users[2], rerun.0);
        assert_eq!(reps.items[2], rerun.1);
    }

    #[test]
    fn representations_are_reproducible() {
        let log = InteractionLog::from_triples(&[(0, 0, 0), (1, 1, 1), (1, 0, 0)], 2, 2, 2).unwrap();
        let mats = vec![build_matrix(&log, &[0]).unwrap(), build_matrix(&log, &[1]).unwrap()];
        let set = enumerate_environments(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = EmbeddingTable::random_normal(2, 8, 1.0, &mut rng);
        let q = EmbeddingTable::random_normal(2, 8, 1.0, &mut rng);
        let a = environment_representations(&set, &mats, &p, &q, 2).unwrap();
        let b = environment_representations(&set, &mats, &p, &q, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn behavior_count_mismatch() {
        let set = enumerate_environments(3).unwrap();
        let log = InteractionLog::from_triples(&[(0, 0, 0)], 1, 1, 1).unwrap();
        assert!(EnvironmentGraphs::build(&set, &[build_matrix(&log, &[0]).unwrap()]).is_err());
    }
}
