//! Symmetric-normalized user-item propagation (LightGCN style).
//!
//! Layer `l+1` of a user row is `sum_{i in N(u)} q_i^(l) / (sqrt|N(u)| sqrt|N(i)|)`,
//! and symmetrically for items. There are no feature transforms and no
//! self-loops. Nodes without neighbors propagate zeros.

use rayon::prelude::*;

use crate::dataset::BehaviorMatrix;
use crate::error::{Error, Result};
use crate::tensor::{axpy, EmbeddingTable};

#[derive(Debug, Clone)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[node]..self.offsets[node + 1];
        self.targets[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }
}

/// Immutable bipartite graph with precomputed edge coefficients.
#[derive(Debug, Clone)]
pub struct PropagationGraph {
    num_users: usize,
    num_items: usize,
    user_adj: Adjacency,
    item_adj: Adjacency,
}

pub fn build_graph(matrix: &BehaviorMatrix, num_users: usize, num_items: usize) -> Result<PropagationGraph> {
    let pairs: Vec<(usize, usize)> = matrix.pairs().collect();
    if let Some(&(u, i)) = pairs.iter().find(|&&(u, i)| u >= num_users || i >= num_items) {
        return Err(Error::invalid(format!(
            "edge ({u}, {i}) outside graph of {num_users} users x {num_items} items"
        )));
    }
    let mut user_deg = vec![0usize; num_users];
    let mut item_deg = vec![0usize; num_items];
    for &(u, i) in &pairs {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }
    let weight = |u: usize, i: usize| 1.0 / ((user_deg[u] as f64).sqrt() * (item_deg[i] as f64).sqrt());

    // `pairs` is sorted by (user, item), so user rows come out ascending.
    let mut user_offsets = vec![0usize; num_users + 1];
    for u in 0..num_users {
        user_offsets[u + 1] = user_offsets[u] + user_deg[u];
    }
    let user_adj = Adjacency {
        offsets: user_offsets,
        targets: pairs.iter().map(|&(_, i)| i).collect(),
        weights: pairs.iter().map(|&(u, i)| weight(u, i)).collect(),
    };

    let mut item_offsets = vec![0usize; num_items + 1];
    for i in 0..num_items {
        item_offsets[i + 1] = item_offsets[i] + item_deg[i];
    }
    let mut cursor = item_offsets.clone();
    let mut targets = vec![0usize; pairs.len()];
    let mut weights = vec![0.0; pairs.len()];
    // Iterating users in ascending order keeps each item's list ascending.
    for &(u, i) in &pairs {
        targets[cursor[i]] = u;
        weights[cursor[i]] = weight(u, i);
        cursor[i] += 1;
    }
    let item_adj = Adjacency {
        offsets: item_offsets,
        targets,
        weights,
    };

    Ok(PropagationGraph {
        num_users,
        num_items,
        user_adj,
        item_adj,
    })
}

impl PropagationGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.targets.len()
    }

    /// `(item, weight)` pairs of `user`, ascending by item.
    pub fn user_neighbors(&self, user: usize) -> Vec<(usize, f64)> {
        self.user_adj.neighbors(user).collect()
    }

    /// `(user, weight)` pairs of `item`, ascending by user.
    pub fn item_neighbors(&self, item: usize) -> Vec<(usize, f64)> {
        self.item_adj.neighbors(item).collect()
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_adj.degree(user)
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_adj.degree(item)
    }

    fn check_inputs(&self, users: &EmbeddingTable, items: &EmbeddingTable) -> Result<()> {
        if users.rows() != self.num_users || items.rows() != self.num_items || users.dim() != items.dim() {
            return Err(Error::Shape(format!(
                "graph {}x{} vs user table {}x{} and item table {}x{}",
                self.num_users,
                self.num_items,
                users.rows(),
                users.dim(),
                items.rows(),
                items.dim()
            )));
        }
        Ok(())
    }

    /// One propagation hop: `(A_ui · items, A_iu · users)`.
    fn hop(&self, users: &EmbeddingTable, items: &EmbeddingTable) -> (EmbeddingTable, EmbeddingTable) {
        let dim = users.dim();
        let mut next_users = EmbeddingTable::zeros(self.num_users, dim);
        let mut next_items = EmbeddingTable::zeros(self.num_items, dim);
        if dim == 0 {
            return (next_users, next_items);
        }
        next_users
            .as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(u, out)| {
                for (i, w) in self.user_adj.neighbors(u) {
                    axpy(w, items.row(i), out);
                }
            });
        next_items
            .as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, out)| {
                for (u, w) in self.item_adj.neighbors(i) {
                    axpy(w, users.row(u), out);
                }
            });
        (next_users, next_items)
    }

    /// Fused `aggregate_layers(propagate(..))`: returns the sum of layers
    /// `0..=layers` for users and items without materializing every layer.
    ///
    /// The normalized adjacency is symmetric, so this map is self-adjoint and
    /// also serves as its own backward pass.
    pub fn layer_sum(
        &self,
        users: &EmbeddingTable,
        items: &EmbeddingTable,
        layers: usize,
    ) -> Result<(EmbeddingTable, EmbeddingTable)> {
        self.check_inputs(users, items)?;
        let mut sum_u = users.clone();
        let mut sum_i = items.clone();
        let (mut cur_u, mut cur_i) = (users.clone(), items.clone());
        for _ in 0..layers {
            let (nu, ni) = self.hop(&cur_u, &cur_i);
            sum_u.add_assign(&nu)?;
            sum_i.add_assign(&ni)?;
            cur_u = nu;
            cur_i = ni;
        }
        Ok((sum_u, sum_i))
    }
}

/// Per-layer user and item tables, layer 0 first.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub users: Vec<EmbeddingTable>,
    pub items: Vec<EmbeddingTable>,
}

pub fn propagate(
    graph: &PropagationGraph,
    user_emb: &EmbeddingTable,
    item_emb: &EmbeddingTable,
    layers: usize,
) -> Result<LayerStack> {
    graph.check_inputs(user_emb, item_emb)?;
    let mut users = vec![user_emb.clone()];
    let mut items = vec![item_emb.clone()];
    for l in 0..layers {
        let (nu, ni) = graph.hop(&users[l], &items[l]);
        users.push(nu);
        items.push(ni);
    }
    Ok(LayerStack { users, items })
}

/// Elementwise sum over all layers, layer 0 included.
pub fn aggregate_layers(layers: &[EmbeddingTable]) -> Result<EmbeddingTable> {
    let first = layers
        .first()
        .ok_or_else(|| Error::invalid("no layers to aggregate"))?;
    let mut out = first.clone();
    for layer in &layers[1..] {
        out.add_assign(layer)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BehaviorMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(pairs: &[(usize, usize)], u: usize, i: usize) -> BehaviorMatrix {
        BehaviorMatrix::from_pairs(pairs.iter().copied(), u, i, [0].into_iter().collect())
    }

    fn table(rows: &[&[f64]]) -> EmbeddingTable {
        EmbeddingTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_edge_has_unit_weight() {
        let g = build_graph(&matrix(&[(0, 0)], 1, 1), 1, 1).unwrap();
        assert_eq!(g.user_neighbors(0), vec![(0, 1.0)]);
        assert_eq!(g.item_neighbors(0), vec![(0, 1.0)]);
    }

    #[test]
    fn degree_two_user_weights() {
        let g = build_graph(&matrix(&[(0, 0), (0, 1)], 1, 2), 1, 2).unwrap();
        let w = 1.0 / 2f64.sqrt();
        assert_eq!(g.user_neighbors(0), vec![(0, w), (1, w)]);
        assert_eq!(g.item_neighbors(1), vec![(0, w)]);
    }

    #[test]
    fn empty_matrix_has_no_edges() {
        let g = build_graph(&matrix(&[], 3, 2), 3, 2).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert!(g.user_neighbors(2).is_empty());
    }

    #[test]
    fn out_of_bounds_edge_rejected() {
        assert!(build_graph(&matrix(&[(1, 0)], 2, 1), 1, 1).is_err());
    }

    #[test]
    fn single_edge_swaps_embeddings() {
        let g = build_graph(&matrix(&[(0, 0)], 1, 1), 1, 1).unwrap();
        let a = table(&[&[1.0, 2.0]]);
        let b = table(&[&[-3.0, 0.5]]);
        let s = propagate(&g, &a, &b, 1).unwrap();
        assert_eq!(s.users[1], b);
        assert_eq!(s.items[1], a);
        // aggregate: p_pt = a + b
        let agg = aggregate_layers(&s.users).unwrap();
        assert_eq!(agg, table(&[&[-2.0, 2.5]]));
    }

    #[test]
    fn empty_graph_zero_higher_layers() {
        let g = build_graph(&matrix(&[], 2, 2), 2, 2).unwrap();
        let a = table(&[&[1.0], &[2.0]]);
        let s = propagate(&g, &a, &a, 2).unwrap();
        assert!(s.users[1..].iter().all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
        assert_eq!(aggregate_layers(&s.users).unwrap(), a);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = build_graph(&matrix(&[(0, 0)], 1, 1), 1, 1).unwrap();
        let a = table(&[&[1.0, 2.0]]);
        let b = table(&[&[1.0]]);
        assert!(matches!(propagate(&g, &a, &b, 1), Err(Error::Shape(_))));
        assert!(aggregate_layers(&[a, b]).is_err());
        assert!(aggregate_layers(&[]).is_err());
    }

    #[test]
    fn aggregate_single_layer_identity() {
        let x = table(&[&[1.0, -1.0]]);
        assert_eq!(aggregate_layers(std::slice::from_ref(&x)).unwrap(), x);
    }

    #[test]
    fn layer_sum_matches_propagate_then_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<_> = (0..30).map(|_| (rng.random_range(0..6), rng.random_range(0..9))).collect();
        let g = build_graph(&matrix(&pairs, 6, 9), 6, 9).unwrap();
        let a = EmbeddingTable::random_normal(6, 4, 1.0, &mut rng);
        let b = EmbeddingTable::random_normal(9, 4, 1.0, &mut rng);
        let s = propagate(&g, &a, &b, 3).unwrap();
        let (su, si) = g.layer_sum(&a, &b, 3).unwrap();
        assert_eq!(su, aggregate_layers(&s.users).unwrap());
        assert_eq!(si, aggregate_layers(&s.items).unwrap());
    }

    #[test]
    fn edge_weights_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = (0..40).map(|_| (rng.random_range(0..7), rng.random_range(0..8))).collect();
        let g = build_graph(&matrix(&pairs, 7, 8), 7, 8).unwrap();
        for u in 0..7 {
            for (i, w) in g.user_neighbors(u) {
                let back = g.item_neighbors(i).into_iter().find(|&(uu, _)| uu == u).unwrap().1;
                assert_eq!(w, back);
            }
        }
    }
}
