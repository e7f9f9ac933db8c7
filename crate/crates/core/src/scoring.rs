//! Shared shape of every pre-rank scorer's output.

/// Scores for one user's candidates, in candidate order.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScores {
    pub scores: Vec<(u32, f64)>,
    /// Per candidate: the scorer had nothing to say (cold user, unseen node).
    pub missing: Vec<bool>,
}

impl CandidateScores {
    pub fn cold(candidates: &[u32]) -> Self {
        CandidateScores {
            scores: candidates.iter().map(|&c| (c, 0.0)).collect(),
            missing: vec![true; candidates.len()],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().map(|s| s.1)
    }
}

/// Anything that maps (user, candidate items) to interest scores.
pub trait CandidateScorer: Send + Sync {
    fn score(&self, user: u32, candidates: &[u32]) -> CandidateScores;
}
