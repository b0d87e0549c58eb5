//! Scoring from aggregated invariant preferences, the target-behavior
//! specific preference and the aggregated item representation.

use std::cmp::Ordering;

use crate::environments::EnvironmentSet;
use crate::error::{Error, Result};
use crate::tensor::{dot, EmbeddingTable};

/// Which user-side terms enter `y_ui`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreTerms {
    pub invariant: bool,
    pub specific: bool,
}

impl Default for ScoreTerms {
    fn default() -> Self {
        Self {
            invariant: true,
            specific: true,
        }
    }
}

/// Immutable snapshot used for scoring and ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringState {
    pub invariant_agg: EmbeddingTable,
    pub target_specific: EmbeddingTable,
    pub items: EmbeddingTable,
    pub terms: ScoreTerms,
}

impl ScoringState {
    pub fn new(invariant_agg: EmbeddingTable, target_specific: EmbeddingTable, items: EmbeddingTable) -> Result<Self> {
        if !invariant_agg.same_shape(&target_specific) || invariant_agg.dim() != items.dim() {
            return Err(Error::Shape(format!(
                "user tables {}x{} / {}x{}, item table {}x{}",
                invariant_agg.rows(),
                invariant_agg.dim(),
                target_specific.rows(),
                target_specific.dim(),
                items.rows(),
                items.dim()
            )));
        }
        Ok(Self {
            invariant_agg,
            target_specific,
            items,
            terms: ScoreTerms::default(),
        })
    }

    /// Plain dot-product scoring `users[u] . items[i]`.
    pub fn dot_product(users: EmbeddingTable, items: EmbeddingTable) -> Result<Self> {
        let zeros = EmbeddingTable::zeros(users.rows(), users.dim());
        let mut s = Self::new(users, zeros, items)?;
        s.terms.specific = false;
        Ok(s)
    }

    pub fn with_terms(mut self, terms: ScoreTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn num_users(&self) -> usize {
        self.invariant_agg.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    #[inline]
    fn score_unchecked(&self, u: usize, i: usize) -> f64 {
        let q = self.items.row(i);
        let mut y = 0.0;
        if self.terms.invariant {
            y += dot(self.invariant_agg.row(u), q);
        }
        if self.terms.specific {
            y += dot(self.target_specific.row(u), q);
        }
        y
    }

    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        if u >= self.num_users() || i >= self.num_items() {
            return Err(Error::invalid(format!("unknown user {u} or item {i}")));
        }
        Ok(self.score_unchecked(u, i))
    }

    /// Scores of `u` against every item.
    pub fn user_scores(&self, u: usize) -> Result<Vec<f64>> {
        if u >= self.num_users() {
            return Err(Error::invalid(format!("unknown user {u}")));
        }
        Ok((0..self.num_items()).map(|i| self.score_unchecked(u, i)).collect())
    }
}

/// Sum of per-environment invariant vectors.
pub fn aggregate_invariant(per_env: &[&[f64]]) -> Result<Vec<f64>> {
    let first = per_env.first().ok_or_else(|| Error::invalid("no environments to aggregate"))?;
    let mut out = first.to_vec();
    for v in &per_env[1..] {
        if v.len() != out.len() {
            return Err(Error::Shape(format!("width {} vs {}", v.len(), out.len())));
        }
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += x);
    }
    Ok(out)
}

/// Sums item tables that come from single-behavior environments. Each entry
/// is `(environment index, table)`.
pub fn aggregate_items(set: &EnvironmentSet, tables: &[(usize, &EmbeddingTable)]) -> Result<EmbeddingTable> {
    let (_, first) = tables.first().ok_or_else(|| Error::invalid("no item tables to aggregate"))?;
    let mut out = EmbeddingTable::zeros(first.rows(), first.dim());
    for &(m, t) in tables {
        if !set.is_singleton(m) {
            return Err(Error::invalid(format!(
                "environment {m} ({:?}) is not a single-behavior environment",
                set.get(m)
            )));
        }
        out.add_assign(t)?;
    }
    Ok(out)
}

/// `q^ = sum_k q^k` over the singleton prefix of `env_items`.
pub fn aggregate_singleton_items(set: &EnvironmentSet, env_items: &[EmbeddingTable]) -> Result<EmbeddingTable> {
    let tables: Vec<(usize, &EmbeddingTable)> = env_items.iter().enumerate().take(set.num_behaviors()).collect();
    aggregate_items(set, &tables)
}

/// Descending score, ascending item id on ties.
#[inline]
pub fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best items of `u` outside `exclude` (sorted ascending), with scores.
pub fn top_k(u: usize, k: usize, exclude: &[usize], state: &ScoringState) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    let scores = state.user_scores(u)?;
    let mut candidates: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|(i, _)| exclude.binary_search(i).is_err())
        .collect();
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
        candidates.truncate(k);
    }
    candidates.sort_by(|a, b| rank_order(*a, *b));
    Ok(candidates)
}
