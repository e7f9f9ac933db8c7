use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::market_data::SparseInteractionMatrix;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        SkipGramParams { dim: 32, window: 5, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 0 }
    }
}

impl SkipGramParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(Error::invalid("skip-gram dim, window, negatives and epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("skip-gram learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramModel {
    /// Input ("center") vectors; tokens absent from the corpus are marked absent.
    pub embeddings: EmbeddingTable,
    /// Output ("context") vectors.
    pub context: EmbeddingTable,
    /// Mean pair loss per epoch.
    pub epoch_losses: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// -ln σ(c·o) - Σ ln σ(-c·n)
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    softplus(-dot(center, context)) + negatives.iter().map(|n| softplus(dot(center, n))).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairGrad {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn pair_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGrad {
    let pos = -sigmoid(-dot(center, context));
    let mut g_center: Vec<f64> = context.iter().map(|o| pos * o).collect();
    let g_context: Vec<f64> = center.iter().map(|c| pos * c).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = sigmoid(dot(center, n));
        g_center.iter_mut().zip(n.iter()).for_each(|(g, x)| *g += s * x);
        g_negs.push(center.iter().map(|c| s * c).collect());
    }
    PairGrad {
        loss: pair_loss(center, context, negatives),
        center: g_center,
        context: g_context,
        negatives: g_negs,
    }
}

/// Each user's history, `shuffles` times, each copy in its own seeded order.
pub fn user_history_sequences(m: &SparseInteractionMatrix, shuffles: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if shuffles == 0 {
        return Err(Error::invalid("shuffles must be >= 1"));
    }
    let mut out = Vec::new();
    for u in 0..m.n_users() as u32 {
        let items = m.user_row(u).0;
        if items.is_empty() {
            continue;
        }
        for s in 0..shuffles {
            let mut seq = items.to_vec();
            seq.shuffle(&mut seed::rng(seed::mix(seed, u as u64, s as u64)));
            out.push(seq);
        }
    }
    Ok(out)
}

/// Cumulative unigram^0.75 table for negative draws.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[u64]) -> Self {
        let mut total = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                total += (c as f64).powf(0.75);
                total
            })
            .collect();
        NegativeSampler { cumulative }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> u32 {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let r = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= r).min(self.cumulative.len() - 1) as u32
    }
}

/// Single-threaded SGD over every (center, context) pair inside `window`,
/// with `negatives` draws per pair (a draw equal to the context token is
/// redrawn a few times, then skipped). Deterministic for a given seed.
pub fn train_skipgram(corpus: &[Vec<u32>], vocab_size: usize, params: &SkipGramParams) -> Result<SkipGramModel> {
    params.validate()?;
    let mut counts = vec![0u64; vocab_size];
    for &t in corpus.iter().flatten() {
        let slot = counts
            .get_mut(t as usize)
            .ok_or_else(|| Error::invalid(format!("token {t} outside vocabulary of {vocab_size}")))?;
        *slot += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::invalid("skip-gram corpus is empty"));
    }
    let dim = params.dim;
    let mut rng = seed::rng(params.seed);
    let init = Uniform::new(-0.5 / dim as f64, 0.5 / dim as f64).expect("valid range");
    let mut w_in: Vec<f64> = (0..vocab_size * dim).map(|_| init.sample(&mut rng)).collect();
    let mut w_out = vec![0.0f64; vocab_size * dim];
    let sampler = NegativeSampler::new(&counts);
    let lr = params.learning_rate;
    let mut grad_center = vec![0.0f64; dim];
    let mut negs: Vec<u32> = Vec::with_capacity(params.negatives);
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    for _ in 0..params.epochs {
        let (mut loss_sum, mut n_pairs) = (0.0f64, 0usize);
        for sentence in corpus {
            for (pos, &center) in sentence.iter().enumerate() {
                let lo = pos.saturating_sub(params.window);
                let hi = (pos + params.window + 1).min(sentence.len());
                for (cpos, &ctx) in sentence.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    negs.clear();
                    for _ in 0..params.negatives {
                        let drawn = (0..10).map(|_| sampler.draw(&mut rng)).find(|&n| n != ctx);
                        if let Some(n) = drawn {
                            negs.push(n);
                        }
                    }
                    let c = center as usize * dim;
                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    for (label, target) in std::iter::once((1.0, ctx)).chain(negs.iter().map(|&n| (0.0, n))) {
                        let t = target as usize * dim;
                        let score = dot(&w_in[c..c + dim], &w_out[t..t + dim]);
                        loss_sum += if label == 1.0 { softplus(-score) } else { softplus(score) };
                        // d loss / d score
                        let g = sigmoid(score) - label;
                        for d in 0..dim {
                            grad_center[d] += g * w_out[t + d];
                            w_out[t + d] -= lr * g * w_in[c + d];
                        }
                    }
                    for d in 0..dim {
                        w_in[c + d] -= lr * grad_center[d];
                    }
                    n_pairs += 1;
                }
            }
        }
        epoch_losses.push(if n_pairs > 0 { loss_sum / n_pairs as f64 } else { 0.0 });
    }

    if w_in.iter().chain(&w_out).any(|v| !v.is_finite()) {
        return Err(Error::invalid("skip-gram training diverged"));
    }
    let present: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    Ok(SkipGramModel {
        embeddings: EmbeddingTable::from_flat(dim, w_in, present.clone())?,
        context: EmbeddingTable::from_flat(dim, w_out, present)?,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn repeated_pair_becomes_similar() {
        let corpus = vec![vec![0u32, 1]; 100];
        let model = train_skipgram(&corpus, 2, &SkipGramParams::default()).unwrap();
        let a = model.embeddings.get(0).unwrap();
        let b = model.context.get(1).unwrap();
        assert!(sigmoid(dot(a, b)) > 0.9, "{}", sigmoid(dot(a, b)));
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let corpus: Vec<Vec<u32>> = (0..40u32)
            .map(|k| (0..6).map(|j| (k % 4) * 6 + j).collect())
            .collect();
        let params = SkipGramParams { epochs: 5, window: 2, ..Default::default() };
        let model = train_skipgram(&corpus, 24, &params).unwrap();
        assert!(model.epoch_losses[4] < model.epoch_losses[0], "{:?}", model.epoch_losses);
    }

    #[test]
    fn absent_tokens_and_errors() {
        let model = train_skipgram(&[vec![0, 2]], 4, &SkipGramParams { epochs: 1, ..Default::default() }).unwrap();
        assert!(model.embeddings.get(1).is_none());
        assert!(model.embeddings.get(2).is_some());
        assert!(train_skipgram(&[vec![5]], 4, &SkipGramParams::default()).is_err());
        assert!(train_skipgram(&[], 4, &SkipGramParams::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seed::rng(3);
        let dim = 6;
        for _ in 0..5 {
            let mut v = |_: usize| -> Vec<f64> { (0..dim).map(|_| rng.random::<f64>() - 0.5).collect() };
            let (c, o, n1, n2) = (v(0), v(1), v(2), v(3));
            let g = pair_loss_and_grad(&c, &o, &[&n1, &n2]);
            let h = 1e-6;
            for d in 0..dim {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[d] += h;
                cm[d] -= h;
                let fd = (pair_loss(&cp, &o, &[&n1, &n2]) - pair_loss(&cm, &o, &[&n1, &n2])) / (2.0 * h);
                assert!((fd - g.center[d]).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn history_sequences() {
        let m = SparseInteractionMatrix::from_triplets(2, 4, vec![(0, 0, 1.0), (1, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0)])
            .unwrap();
        let seqs = user_history_sequences(&m, 2, 9).unwrap();
        assert_eq!(seqs.len(), 4);
        assert_eq!(seqs[0], vec![0]);
        assert_eq!(seqs[1], vec![0]);
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for &t in seqs.iter().flatten() {
            *counts.entry(t).or_default() += 1;
        }
        assert!((0..4).all(|t| counts[&t] == 2));
        assert!(user_history_sequences(&m, 0, 9).is_err());
    }
}
