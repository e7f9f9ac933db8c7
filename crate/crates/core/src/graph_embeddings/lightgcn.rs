use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::skipgram::softplus;
use super::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::market_data::SparseInteractionMatrix;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightGcnParams {
    pub layers: usize,
    pub dim: usize,
    pub node_dropout: f64,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LightGcnParams {
    fn default() -> Self {
        LightGcnParams {
            layers: 4,
            dim: 64,
            node_dropout: 0.4,
            learning_rate: 0.001,
            l2_reg: 1e-4,
            epochs: 20,
            batch_size: 1024,
            seed: 0,
        }
    }
}

impl LightGcnParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("lightgcn layers, dim, epochs and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.node_dropout) {
            return Err(Error::invalid("lightgcn node_dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.l2_reg >= 0.0) {
            return Err(Error::invalid("lightgcn learning_rate must be positive and l2_reg non-negative"));
        }
        Ok(())
    }
}

/// D^-1/2 A D^-1/2 over the bipartite node space, stored as CSR rows.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    n_users: usize,
    ptr: Vec<usize>,
    adj: Vec<u32>,
    weight: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(m: &SparseInteractionMatrix) -> Self {
        Self::build(m, None)
    }

    /// Drops every edge touching a node whose `keep` flag is false; degrees
    /// are recounted on what remains.
    pub fn with_kept_nodes(m: &SparseInteractionMatrix, keep: &[bool]) -> Self {
        Self::build(m, Some(keep))
    }

    fn build(m: &SparseInteractionMatrix, keep: Option<&[bool]>) -> Self {
        let nu = m.n_users();
        let n = nu + m.n_items();
        let kept = |node: usize| keep.is_none_or(|k| k[node]);
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (u, i, _) in m.triplets() {
            let (a, b) = (u as usize, nu + i as usize);
            if kept(a) && kept(b) {
                lists[a].push(b as u32);
                lists[b].push(a as u32);
            }
        }
        let deg: Vec<f64> = lists.iter().map(|l| l.len() as f64).collect();
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        let (mut adj, mut weight) = (Vec::new(), Vec::new());
        for (a, l) in lists.iter_mut().enumerate() {
            l.sort_unstable();
            for &b in l.iter() {
                adj.push(b);
                weight.push(1.0 / (deg[a] * deg[b as usize]).sqrt());
            }
            ptr.push(adj.len());
        }
        NormalizedAdjacency { n_users: nu, ptr, adj, weight }
    }

    pub fn n_nodes(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn degree(&self, node: usize) -> usize {
        self.ptr[node + 1] - self.ptr[node]
    }

    /// out = Ã x, rows of width `dim`.
    fn apply(&self, x: &[f64], dim: usize, out: &mut [f64]) {
        out.par_chunks_mut(dim).enumerate().for_each(|(a, row)| {
            row.iter_mut().for_each(|v| *v = 0.0);
            for k in self.ptr[a]..self.ptr[a + 1] {
                let b = self.adj[k] as usize;
                let w = self.weight[k];
                row.iter_mut().zip(&x[b * dim..(b + 1) * dim]).for_each(|(r, v)| *r += w * v);
            }
        });
    }

    /// Mean of Ã^k x for k in 0..=layers. Ã is symmetric, so this map is
    /// also its own adjoint.
    fn propagate(&self, x: &[f64], dim: usize, layers: usize) -> Vec<f64> {
        let mut acc = x.to_vec();
        let mut cur = x.to_vec();
        let mut next = vec![0.0; x.len()];
        for _ in 0..layers {
            self.apply(&cur, dim, &mut next);
            std::mem::swap(&mut cur, &mut next);
            acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += c);
        }
        let scale = 1.0 / (layers + 1) as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
        acc
    }
}

/// Layer-mean propagation of `e0` over the normalized user-item graph.
pub fn lightgcn_propagate(m: &SparseInteractionMatrix, e0: &EmbeddingTable, layers: usize) -> Result<EmbeddingTable> {
    let n = m.n_users() + m.n_items();
    if e0.n_nodes() != n {
        return Err(Error::invalid(format!("embedding covers {} nodes, graph has {n}", e0.n_nodes())));
    }
    let adj = NormalizedAdjacency::new(m);
    let out = adj.propagate(e0.as_flat(), e0.dim(), layers);
    EmbeddingTable::from_flat(e0.dim(), out, vec![true; n])
}

/// One (user, positive item, negative item) triple; ids are matrix ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Batch-mean BPR loss with L2 on the layer-0 rows each triple touches,
/// and its gradient with respect to all layer-0 embeddings (flat).
pub fn bpr_loss_and_grad(
    adj: &NormalizedAdjacency,
    e0: &EmbeddingTable,
    layers: usize,
    triples: &[BprTriple],
    l2_reg: f64,
) -> (f64, Vec<f64>) {
    let dim = e0.dim();
    let x0 = e0.as_flat();
    let e = adj.propagate(x0, dim, layers);
    let nu = adj.n_users();
    let row = |v: &[f64], node: usize| -> std::ops::Range<usize> {
        debug_assert!((node + 1) * dim <= v.len());
        node * dim..(node + 1) * dim
    };
    let mut grad_e = vec![0.0; e.len()];
    let mut grad_reg = vec![0.0; e.len()];
    let mut loss = 0.0;
    let b = triples.len().max(1) as f64;
    for t in triples {
        let (u, p, n) = (t.user as usize, nu + t.pos as usize, nu + t.neg as usize);
        let eu = &e[row(&e, u)];
        let ep = &e[row(&e, p)];
        let en = &e[row(&e, n)];
        let x = dot(eu, ep) - dot(eu, en);
        let reg: f64 = [u, p, n].iter().map(|&k| dot(&x0[row(x0, k)], &x0[row(x0, k)])).sum();
        loss += softplus(-x) + l2_reg * reg;
        // d softplus(-x) / dx = -σ(-x)
        let s = -1.0 / (1.0 + x.exp());
        for d in 0..dim {
            grad_e[u * dim + d] += s * (ep[d] - en[d]) / b;
            grad_e[p * dim + d] += s * eu[d] / b;
            grad_e[n * dim + d] -= s * eu[d] / b;
        }
        for &k in &[u, p, n] {
            for d in 0..dim {
                grad_reg[k * dim + d] += 2.0 * l2_reg * x0[k * dim + d] / b;
            }
        }
    }
    let mut grad = adj.propagate(&grad_e, dim, layers);
    grad.iter_mut().zip(&grad_reg).for_each(|(g, r)| *g += r);
    (loss / b, grad)
}

#[derive(Clone, Debug)]
pub struct LightGcnModel {
    /// Propagated embeddings on the full graph; zero-degree nodes absent.
    pub embeddings: EmbeddingTable,
    /// Trained layer-0 embeddings.
    pub ego: EmbeddingTable,
    /// Mean BPR loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * grad[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// BPR training with Adam over shuffled positive pairs. Negatives come
/// uniformly from the active items the user has not interacted with.
pub fn train_lightgcn(m: &SparseInteractionMatrix, params: &LightGcnParams) -> Result<LightGcnModel> {
    params.validate()?;
    let m = m.binarized();
    if m.nnz() == 0 {
        return Err(Error::invalid("lightgcn needs at least one interaction"));
    }
    let nu = m.n_users();
    let n = nu + m.n_items();
    let dim = params.dim;
    let mut rng = seed::rng(params.seed);
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    let mut e0 = EmbeddingTable::from_flat(dim, (0..n * dim).map(|_| normal.sample(&mut rng)).collect(), vec![true; n])?;
    let full = NormalizedAdjacency::new(&m);
    let items = m.active_items();
    let mut pairs: Vec<(u32, u32)> = m.triplets().map(|(u, i, _)| (u, i)).collect();
    let mut adam = Adam::new(n * dim, params.learning_rate);
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut skipped = 0usize;

    for _ in 0..params.epochs {
        pairs.shuffle(&mut rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in pairs.chunks(params.batch_size) {
            let mut triples = Vec::with_capacity(batch.len());
            for &(u, pos) in batch {
                let neg = (0..100).map(|_| items[rng.random_range(0..items.len())]).find(|&j| !m.contains(u, j));
                match neg {
                    Some(neg) => triples.push(BprTriple { user: u, pos, neg }),
                    None => skipped += 1,
                }
            }
            if triples.is_empty() {
                continue;
            }
            let dropped;
            let adj = if params.node_dropout > 0.0 {
                let keep: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= params.node_dropout).collect();
                dropped = NormalizedAdjacency::with_kept_nodes(&m, &keep);
                &dropped
            } else {
                &full
            };
            let (loss, grad) = bpr_loss_and_grad(adj, &e0, params.layers, &triples, params.l2_reg);
            adam.step(e0.as_flat_mut(), &grad);
            loss_sum += loss * triples.len() as f64;
            count += triples.len();
        }
        epoch_losses.push(if count > 0 { loss_sum / count as f64 } else { 0.0 });
    }
    if skipped > 0 {
        log::warn!("lightgcn: skipped {skipped} triples with no sampleable negative");
    }
    if !e0.is_finite() {
        return Err(Error::invalid("lightgcn training diverged"));
    }
    let out = full.propagate(e0.as_flat(), dim, params.layers);
    let present = (0..n).map(|k| full.degree(k) > 0).collect();
    Ok(LightGcnModel {
        embeddings: EmbeddingTable::from_flat(dim, out, present)?,
        ego: e0,
        epoch_losses,
    })
}
