use super::rank_order;
use crate::market_data::SparseInteractionMatrix;
use crate::scoring::{CandidateScorer, CandidateScores};

/// Two-step mass diffusion on the bipartite graph. Each seed item of `user`
/// spreads unit mass evenly over its users; each user then spreads what it
/// received evenly over its items. Returns items with positive mass, ranked.
/// A user without interactions gets an empty list.
pub fn bigraph_scores(m: &SparseInteractionMatrix, user: u32, keep_seeds: bool) -> Vec<(u32, f64)> {
    let seeds = m.user_row(user).0;
    if seeds.is_empty() {
        return Vec::new();
    }
    let mut user_mass = vec![0.0f64; m.n_users()];
    for &i in seeds {
        let users = m.item_col(i).0;
        let share = 1.0 / users.len() as f64;
        for &v in users {
            user_mass[v as usize] += share;
        }
    }
    let mut item_mass = vec![0.0f64; m.n_items()];
    for (v, &mass) in user_mass.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let items = m.user_row(v as u32).0;
        let share = mass / items.len() as f64;
        for &j in items {
            item_mass[j as usize] += share;
        }
    }
    let mut out: Vec<(u32, f64)> = item_mass
        .into_iter()
        .enumerate()
        .filter(|&(j, s)| s > 0.0 && (keep_seeds || seeds.binary_search(&(j as u32)).is_err()))
        .map(|(j, s)| (j as u32, s))
        .collect();
    out.sort_by(|a, b| rank_order(a.0, a.1, b.0, b.1));
    out
}

pub struct BiGraphScorer {
    pub matrix: SparseInteractionMatrix,
}

impl CandidateScorer for BiGraphScorer {
    fn score(&self, user: u32, candidates: &[u32]) -> CandidateScores {
        if self.matrix.user_degree(user) == 0 {
            return CandidateScores::cold(candidates);
        }
        let mut mass = std::collections::HashMap::new();
        mass.extend(bigraph_scores(&self.matrix, user, true));
        CandidateScores {
            scores: candidates.iter().map(|&c| (c, mass.get(&c).copied().unwrap_or(0.0))).collect(),
            missing: vec![false; candidates.len()],
        }
    }
}
