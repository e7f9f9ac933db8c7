//! Memory-based scorers: cosine ItemCF/UserCF, Swing, log-likelihood ratio
//! and Bi-Graph mass diffusion.

mod bigraph;
mod cosine;
mod llr;
mod swing;

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::market_data::SparseInteractionMatrix;
use crate::scoring::{CandidateScorer, CandidateScores};

pub use bigraph::{bigraph_scores, BiGraphScorer};
pub use cosine::{item_cosine_similarity, user_cosine_similarity};
pub use llr::{llr, llr_item_similarity, LlrCounts};
pub use swing::{swing_similarity, SwingParams};

pub const DEFAULT_TOP_K: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub sim: f64,
}

/// Score descending, then id ascending.
pub fn rank_order(a_id: u32, a_score: f64, b_id: u32, b_score: f64) -> Ordering {
    b_score.total_cmp(&a_score).then(a_id.cmp(&b_id))
}

/// Per-row top-K neighbor lists. Used for both item-item and user-user tables.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTable {
    k: usize,
    rows: Vec<Vec<Neighbor>>,
}

impl SimTable {
    /// Sorts each row (similarity descending, id ascending), drops self pairs
    /// and non-finite or nonpositive values, truncates to `k`.
    pub fn from_rows(mut rows: Vec<Vec<Neighbor>>, k: usize) -> Self {
        for (idx, row) in rows.iter_mut().enumerate() {
            row.retain(|n| n.id as usize != idx && n.sim.is_finite() && n.sim > 0.0);
            row.sort_by(|a, b| rank_order(a.id, a.sim, b.id, b.sim));
            row.truncate(k);
        }
        SimTable { k, rows }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn neighbors(&self, id: u32) -> &[Neighbor] {
        self.rows.get(id as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Similarity of `b` in `a`'s list, 0 when absent.
    pub fn get(&self, a: u32, b: u32) -> f64 {
        self.neighbors(a).iter().find(|n| n.id == b).map_or(0.0, |n| n.sim)
    }
}

/// Scratch accumulator reused across rows of one similarity build.
pub(crate) struct Accumulator {
    acc: Vec<f64>,
    touched: Vec<u32>,
}

impl Accumulator {
    pub(crate) fn new(n: usize) -> Self {
        Accumulator { acc: vec![0.0; n], touched: Vec::new() }
    }

    #[inline]
    pub(crate) fn add(&mut self, idx: u32, v: f64) {
        let slot = &mut self.acc[idx as usize];
        if *slot == 0.0 {
            self.touched.push(idx);
        }
        *slot += v;
    }

    /// Drain into (index, value) pairs sorted by index and reset.
    pub(crate) fn drain(&mut self) -> Vec<(u32, f64)> {
        self.touched.sort_unstable();
        self.touched.dedup();
        let out = self
            .touched
            .iter()
            .map(|&i| (i, self.acc[i as usize]))
            .collect();
        for &i in &self.touched {
            self.acc[i as usize] = 0.0;
        }
        self.touched.clear();
        out
    }
}

/// Build one row per index in parallel; output order is index order.
pub(crate) fn par_rows<F>(n_rows: usize, width: usize, row: F) -> Vec<Vec<Neighbor>>
where
    F: Fn(u32, &mut Accumulator) -> Vec<Neighbor> + Sync,
{
    (0..n_rows as u32)
        .into_par_iter()
        .map_init(|| Accumulator::new(width), |acc, i| row(i, acc))
        .collect()
}

/// score(u, c) = sum over the user's history j of sim(c, j) * r_uj.
/// With `history_cap = Some(n)` only the n largest terms per candidate count.
pub fn score_candidates(
    table: &SimTable,
    m: &SparseInteractionMatrix,
    user: u32,
    candidates: &[u32],
    history_cap: Option<usize>,
) -> CandidateScores {
    let (hist, ratings) = m.user_row(user);
    if hist.is_empty() {
        return CandidateScores::cold(candidates);
    }
    let scores = candidates
        .iter()
        .map(|&c| {
            let mut terms: Vec<f64> = table
                .neighbors(c)
                .iter()
                .filter_map(|n| hist.binary_search(&n.id).ok().map(|k| n.sim * ratings[k]))
                .collect();
            if let Some(cap) = history_cap {
                terms.sort_by(|a, b| b.total_cmp(a));
                terms.truncate(cap);
            }
            (c, terms.iter().sum())
        })
        .collect();
    CandidateScores { scores, missing: vec![false; candidates.len()] }
}

/// score(u, c) = sum over the user's neighbors v of sim(u, v) * r_vc.
pub fn score_candidates_user_based(
    table: &SimTable,
    m: &SparseInteractionMatrix,
    user: u32,
    candidates: &[u32],
) -> CandidateScores {
    if m.user_degree(user) == 0 {
        return CandidateScores::cold(candidates);
    }
    let neighbors = table.neighbors(user);
    let scores = candidates
        .iter()
        .map(|&c| {
            let s = neighbors
                .iter()
                .filter_map(|n| m.rating(n.id, c).map(|r| n.sim * r))
                .sum();
            (c, s)
        })
        .collect();
    CandidateScores { scores, missing: vec![false; candidates.len()] }
}

/// Item-item table plus the matrix whose histories it aggregates.
pub struct ItemBasedScorer {
    pub table: SimTable,
    pub matrix: SparseInteractionMatrix,
    pub history_cap: Option<usize>,
}

impl CandidateScorer for ItemBasedScorer {
    fn score(&self, user: u32, candidates: &[u32]) -> CandidateScores {
        score_candidates(&self.table, &self.matrix, user, candidates, self.history_cap)
    }
}

pub struct UserBasedScorer {
    pub table: SimTable,
    pub matrix: SparseInteractionMatrix,
}

impl CandidateScorer for UserBasedScorer {
    fn score(&self, user: u32, candidates: &[u32]) -> CandidateScores {
        score_candidates_user_based(&self.table, &self.matrix, user, candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sorting_and_truncation() {
        let rows = vec![
            vec![
                Neighbor { id: 0, sim: 9.0 },
                Neighbor { id: 3, sim: 0.5 },
                Neighbor { id: 2, sim: 0.5 },
                Neighbor { id: 1, sim: 0.7 },
                Neighbor { id: 4, sim: 0.0 },
            ],
            vec![],
        ];
        let t = SimTable::from_rows(rows, 2);
        let ids: Vec<u32> = t.neighbors(0).iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![1, 2], "self pair dropped, tie broken by id");
        assert_eq!(t.get(0, 3), 0.0);
        assert!(t.neighbors(7).is_empty());
    }

    #[test]
    fn identical_history_item_with_rating_five() {
        let m = SparseInteractionMatrix::from_triplets(1, 2, vec![(0, 0, 5.0)]).unwrap();
        let t = SimTable::from_rows(vec![vec![Neighbor { id: 1, sim: 1.0 }], vec![Neighbor { id: 0, sim: 1.0 }]], 10);
        let s = score_candidates(&t, &m, 0, &[1], None);
        assert!(s.scores[0].1 >= 5.0);
        assert!(!s.missing[0]);
    }

    #[test]
    fn cold_user_scores_zero_and_flags() {
        let m = SparseInteractionMatrix::from_triplets(2, 2, vec![(0, 0, 5.0)]).unwrap();
        let t = SimTable::from_rows(vec![vec![], vec![]], 10);
        let s = score_candidates(&t, &m, 1, &[0, 1], None);
        assert_eq!(s.values().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(s.missing, vec![true, true]);
        let s = score_candidates(&t, &m, 99, &[0], None);
        assert_eq!(s.missing, vec![true]);
    }

    #[test]
    fn history_cap_keeps_largest_terms() {
        let m = SparseInteractionMatrix::from_triplets(1, 4, vec![(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
        let t = SimTable::from_rows(
            vec![
                vec![Neighbor { id: 1, sim: 0.1 }, Neighbor { id: 2, sim: 0.5 }, Neighbor { id: 3, sim: 0.3 }],
                vec![],
                vec![],
                vec![],
            ],
            10,
        );
        let full = score_candidates(&t, &m, 0, &[0], None).scores[0].1;
        let capped = score_candidates(&t, &m, 0, &[0], Some(2)).scores[0].1;
        assert!((full - 0.9).abs() < 1e-12);
        assert!((capped - 0.8).abs() < 1e-12);
    }
}
