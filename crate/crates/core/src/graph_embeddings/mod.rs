//! Embedding scorers: skip-gram with negative sampling over shuffled user
//! histories or node2vec walks, and LightGCN trained with BPR.
//!
//! Bipartite graphs use one node space: users are `0..n_users`, item `i` is
//! node `n_users + i`.

mod lightgcn;
mod skipgram;
mod walks;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::SparseInteractionMatrix;
use crate::scoring::{CandidateScorer, CandidateScores};

pub use lightgcn::{
    bpr_loss_and_grad, lightgcn_propagate, train_lightgcn, BprTriple, LightGcnModel, LightGcnParams,
    NormalizedAdjacency,
};
pub use skipgram::{
    pair_loss, pair_loss_and_grad, train_skipgram, user_history_sequences, PairGrad, SkipGramModel,
    SkipGramParams,
};
pub use walks::{generate_walks, transition_probabilities, transition_weights, WalkParams};

/// Dense node -> vector table; nodes never trained are marked absent.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    present: Vec<bool>,
}

impl EmbeddingTable {
    pub fn zeros(n_nodes: usize, dim: usize) -> Self {
        EmbeddingTable { dim, data: vec![0.0; n_nodes * dim], present: vec![true; n_nodes] }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>, present: Vec<bool>) -> Result<Self> {
        if dim == 0 || data.len() != dim * present.len() {
            return Err(Error::invalid("embedding data does not match n_nodes x dim"));
        }
        Ok(EmbeddingTable { dim, data, present })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.present.len()
    }

    pub fn get(&self, node: u32) -> Option<&[f64]> {
        let n = node as usize;
        if n < self.present.len() && self.present[n] {
            Some(&self.data[n * self.dim..(n + 1) * self.dim])
        } else {
            None
        }
    }

    pub fn set(&mut self, node: u32, v: &[f64]) {
        let n = node as usize;
        self.data[n * self.dim..(n + 1) * self.dim].copy_from_slice(v);
        self.present[n] = true;
    }

    pub fn mark_absent(&mut self, node: u32) {
        self.present[node as usize] = false;
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `node_name<TAB>v1<TAB>...<TAB>vd`, present nodes only.
    pub fn write_tsv(&self, path: &Path, name: impl Fn(u32) -> String) -> Result<()> {
        let mut out = String::new();
        for node in 0..self.n_nodes() as u32 {
            if let Some(v) = self.get(node) {
                out.push_str(&name(node));
                for x in v {
                    let _ = write!(out, "\t{x}");
                }
                out.push('\n');
            }
        }
        crate::market_data::write_atomic_pub(path, out.as_bytes())
    }
}

/// Parse an embedding TSV into (name, vector) rows. Every row must have the
/// same width; a bad row is an error naming its line.
pub fn read_embedding_tsv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut dim = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            file: path.display().to_string(),
            line: idx + 1,
            message,
        };
        let mut fields = line.split('\t');
        let name = fields.next().unwrap_or_default().trim().to_owned();
        let v: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| err(format!("bad value {f:?}"))))
            .collect::<Result<_>>()?;
        if name.is_empty() || v.is_empty() {
            return Err(err("expected a name and at least one value".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(err(format!("expected {d} values, found {}", v.len())))
            }
            _ => {}
        }
        rows.push((name, v));
    }
    Ok(rows)
}

/// Undirected graph with sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeGraph {
    ptr: Vec<usize>,
    adj: Vec<u32>,
}

impl NodeGraph {
    pub fn from_edges(n_nodes: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for &(a, b) in edges {
            if a as usize >= n_nodes || b as usize >= n_nodes {
                return Err(Error::invalid(format!("edge ({a}, {b}) outside graph")));
            }
            lists[a as usize].push(b);
            if a != b {
                lists[b as usize].push(a);
            }
        }
        let mut ptr = Vec::with_capacity(n_nodes + 1);
        ptr.push(0);
        let mut adj = Vec::new();
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            adj.extend(l);
            ptr.push(adj.len());
        }
        Ok(NodeGraph { ptr, adj })
    }

    /// User-item graph of the matrix in the shared node space.
    pub fn bipartite(m: &SparseInteractionMatrix) -> Self {
        let nu = m.n_users() as u32;
        let edges: Vec<(u32, u32)> = m.triplets().map(|(u, i, _)| (u, nu + i)).collect();
        NodeGraph::from_edges(m.n_users() + m.n_items(), &edges).expect("matrix indices in range")
    }

    pub fn n_nodes(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[self.ptr[v as usize]..self.ptr[v as usize + 1]]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dot,
    Cosine,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Dot or cosine between the user's vector and each candidate's. Absent
/// nodes score 0 and are flagged.
pub fn embedding_score(e: &EmbeddingTable, user: u32, candidates: &[u32], metric: Metric) -> CandidateScores {
    let Some(uv) = e.get(user) else {
        return CandidateScores::cold(candidates);
    };
    let mut missing = Vec::with_capacity(candidates.len());
    let scores = candidates
        .iter()
        .map(|&c| match e.get(c) {
            Some(cv) => {
                missing.push(false);
                let s = match metric {
                    Metric::Dot => dot(uv, cv),
                    Metric::Cosine => cosine(uv, cv),
                };
                (c, s)
            }
            None => {
                missing.push(true);
                (c, 0.0)
            }
        })
        .collect();
    CandidateScores { scores, missing }
}

/// Scores item candidates against a table in the shared bipartite node space.
pub struct EmbeddingScorer {
    pub table: EmbeddingTable,
    pub n_users: usize,
    pub metric: Metric,
}

impl CandidateScorer for EmbeddingScorer {
    fn score(&self, user: u32, candidates: &[u32]) -> CandidateScores {
        let nodes: Vec<u32> = candidates.iter().map(|&c| self.n_users as u32 + c).collect();
        let mut s = embedding_score(&self.table, user, &nodes, self.metric);
        for (slot, &c) in s.scores.iter_mut().zip(candidates) {
            slot.0 = c;
        }
        s
    }
}

/// Bipartite-space table whose item rows come from `item_vectors` (indexed
/// by item id) and whose user rows are the mean of the user's present
/// history item vectors.
pub fn users_from_item_means(m: &SparseInteractionMatrix, item_vectors: &EmbeddingTable) -> EmbeddingTable {
    let dim = item_vectors.dim();
    let nu = m.n_users();
    let mut out = EmbeddingTable::zeros(nu + m.n_items(), dim);
    for i in 0..m.n_items() as u32 {
        match item_vectors.get(i) {
            Some(v) => out.set(nu as u32 + i, v),
            None => out.mark_absent(nu as u32 + i),
        }
    }
    let mut acc = vec![0.0; dim];
    for u in 0..nu as u32 {
        acc.iter_mut().for_each(|x| *x = 0.0);
        let mut n = 0usize;
        for &i in m.user_row(u).0 {
            if let Some(v) = item_vectors.get(i) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                n += 1;
            }
        }
        if n == 0 {
            out.mark_absent(u);
        } else {
            let mean: Vec<f64> = acc.iter().map(|a| a / n as f64).collect();
            out.set(u, &mean);
        }
    }
    out
}
