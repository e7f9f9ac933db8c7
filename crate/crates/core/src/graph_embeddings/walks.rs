use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NodeGraph;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkParams {
    /// Return parameter: weight 1/p to step back to the previous node.
    pub p: f64,
    /// In-out parameter: weight 1/q to move away from the previous node.
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
}

impl WalkParams {
    pub fn dfs(seed: u64) -> Self {
        WalkParams { p: 1.0, q: 0.5, walk_length: 20, walks_per_node: 4, seed }
    }

    pub fn bfs(seed: u64) -> Self {
        WalkParams { p: 1.0, q: 2.0, ..WalkParams::dfs(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0 && self.p.is_finite() && self.q.is_finite()) {
            return Err(Error::invalid("walk p and q must be positive"));
        }
        if self.walk_length < 2 {
            return Err(Error::invalid("walk_length must be >= 2"));
        }
        if self.walks_per_node == 0 {
            return Err(Error::invalid("walks_per_node must be >= 1"));
        }
        Ok(())
    }
}

/// Unnormalized second-order weights for leaving `cur`, having arrived from
/// `prev`: 1/p back to `prev`, 1 to neighbors of `prev`, 1/q otherwise.
/// Without a previous node every neighbor weighs 1.
pub fn transition_weights(g: &NodeGraph, prev: Option<u32>, cur: u32, p: f64, q: f64) -> Vec<(u32, f64)> {
    g.neighbors(cur)
        .iter()
        .map(|&x| {
            let w = match prev {
                None => 1.0,
                Some(t) if x == t => 1.0 / p,
                Some(t) if g.has_edge(t, x) => 1.0,
                Some(_) => 1.0 / q,
            };
            (x, w)
        })
        .collect()
}

pub fn transition_probabilities(g: &NodeGraph, prev: Option<u32>, cur: u32, p: f64, q: f64) -> Vec<(u32, f64)> {
    let w = transition_weights(g, prev, cur, p, q);
    let total: f64 = w.iter().map(|x| x.1).sum();
    w.into_iter().map(|(x, v)| (x, v / total)).collect()
}

fn sample<R: Rng>(rng: &mut R, weights: &[(u32, f64)]) -> u32 {
    let total: f64 = weights.iter().map(|x| x.1).sum();
    let mut r = rng.random::<f64>() * total;
    for &(x, w) in weights {
        if r < w {
            return x;
        }
        r -= w;
    }
    weights.last().expect("non-empty neighbor list").0
}

/// `walks_per_node` biased walks from every node with at least one neighbor,
/// grouped by round then by start node. Each walk draws from its own stream
/// derived from (seed, round, start), so the output does not depend on thread
/// scheduling.
pub fn generate_walks(g: &NodeGraph, params: &WalkParams) -> Result<Vec<Vec<u32>>> {
    params.validate()?;
    let starts: Vec<u32> = (0..g.n_nodes() as u32).filter(|&v| g.degree(v) > 0).collect();
    let jobs: Vec<(usize, u32)> = (0..params.walks_per_node)
        .flat_map(|round| starts.iter().map(move |&s| (round, s)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(round, start)| {
            let mut rng = seed::rng(seed::mix(params.seed, round as u64, start as u64));
            let mut walk = Vec::with_capacity(params.walk_length);
            walk.push(start);
            while walk.len() < params.walk_length {
                let cur = *walk.last().expect("walk is never empty");
                let prev = (walk.len() >= 2).then(|| walk[walk.len() - 2]);
                let w = transition_weights(g, prev, cur, params.p, params.q);
                if w.is_empty() {
                    break;
                }
                walk.push(sample(&mut rng, &w));
            }
            walk
        })
        .collect())
}
