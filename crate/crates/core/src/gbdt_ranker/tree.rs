use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bins::BinnedColumns;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `value <= threshold` (equivalently bin <= `bin`) go left.
    Split { feature: usize, bin: u8, threshold: f64, gain: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Raw (unshrunk) leaf value for one row, given a feature lookup.
    pub fn leaf_value(&self, x: impl Fn(usize) -> f64) -> f64 {
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    n = if x(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature, *gain)),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Bin {
    g: f64,
    h: f64,
    c: u32,
}

type Hist = Vec<Vec<Bin>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub bin: u8,
    pub gain: f64,
}

pub(crate) struct GrowParams {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub l2: f64,
}

/// ½[GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)]
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, l2: f64) -> f64 {
    let term = |g: f64, h: f64| if h + l2 > 0.0 { g * g / (h + l2) } else { 0.0 };
    0.5 * (term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr))
}

/// `a` wins over the incumbent only by a clear margin, so near-equal gains
/// keep the earlier (feature, bin).
#[inline]
pub fn beats(gain: f64, best: Option<f64>) -> bool {
    gain > 0.0 && best.is_none_or(|b| gain > b + 1e-12 * b.abs())
}

fn build_hist(data: &BinnedColumns, features: &[usize], rows: &[u32], grad: &[f64], hess: &[f64]) -> Hist {
    features
        .par_iter()
        .map(|&f| {
            let mut h = vec![Bin::default(); data.n_bins[f]];
            let col = &data.bins[f];
            for &r in rows {
                let b = &mut h[col[r as usize] as usize];
                b.g += grad[r as usize];
                b.h += hess[r as usize];
                b.c += 1;
            }
            h
        })
        .collect()
}

fn subtract(parent: &Hist, child: &Hist) -> Hist {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| {
            p.iter()
                .zip(c)
                .map(|(a, b)| Bin { g: a.g - b.g, h: a.h - b.h, c: a.c - b.c })
                .collect()
        })
        .collect()
}

fn best_split(hist: &Hist, features: &[usize], p: &GrowParams) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for (k, &f) in features.iter().enumerate() {
        let h = &hist[k];
        let (gt, ht, ct) = h.iter().fold((0.0, 0.0, 0u32), |a, b| (a.0 + b.g, a.1 + b.h, a.2 + b.c));
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
        for (b, bin) in h.iter().enumerate().take(h.len().saturating_sub(1)) {
            gl += bin.g;
            hl += bin.h;
            cl += bin.c;
            let cr = ct - cl;
            if (cl as usize) < p.min_data_in_leaf || (cr as usize) < p.min_data_in_leaf {
                continue;
            }
            let gain = split_gain(gl, hl, gt - gl, ht - hl, p.l2);
            if beats(gain, best.map(|s| s.gain)) {
                best = Some(SplitChoice { feature: f, bin: b as u8, gain });
            }
        }
    }
    best
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    hist: Hist,
    best: Option<SplitChoice>,
}

/// Leaf-wise growth. Returns the tree and, per leaf, the rows that landed
/// there with its value.
pub(crate) fn grow_tree(
    data: &BinnedColumns,
    thresholds: &[Vec<f64>],
    features: &[usize],
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    p: &GrowParams,
) -> (Tree, Vec<(Vec<u32>, f64)>) {
    let hist = build_hist(data, features, &rows, grad, hess);
    let best = best_split(&hist, features, p);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut leaves = vec![Leaf { node: 0, rows, hist, best }];
    while leaves.len() < p.num_leaves {
        let mut pick: Option<usize> = None;
        for (k, l) in leaves.iter().enumerate() {
            if let Some(s) = l.best {
                if beats(s.gain, pick.and_then(|q| leaves[q].best.map(|b| b.gain))) {
                    pick = Some(k);
                }
            }
        }
        let Some(k) = pick else { break };
        let leaf = leaves.remove(k);
        let s = leaf.best.unwrap();
        let col = &data.bins[s.feature];
        let (lrows, rrows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| col[r as usize] <= s.bin);
        let (lhist, rhist) = if lrows.len() <= rrows.len() {
            let lh = build_hist(data, features, &lrows, grad, hess);
            let rh = subtract(&leaf.hist, &lh);
            (lh, rh)
        } else {
            let rh = build_hist(data, features, &rrows, grad, hess);
            let lh = subtract(&leaf.hist, &rh);
            (lh, rh)
        };
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: s.feature,
            bin: s.bin,
            threshold: thresholds[s.feature][s.bin as usize],
            gain: s.gain,
            left: li,
            right: ri,
        };
        let lb = best_split(&lhist, features, p);
        let rb = best_split(&rhist, features, p);
        // left child takes the parent's slot so leaf order is stable
        leaves.insert(k, Leaf { node: li, rows: lrows, hist: lhist, best: lb });
        leaves.push(Leaf { node: ri, rows: rrows, hist: rhist, best: rb });
    }
    let mut out = Vec::with_capacity(leaves.len());
    for l in leaves {
        let (g, h) = l.rows.iter().fold((0.0, 0.0), |a, &r| (a.0 + grad[r as usize], a.1 + hess[r as usize]));
        let value = if h + p.l2 > 0.0 { -g / (h + p.l2) } else { 0.0 };
        nodes[l.node] = Node::Leaf { value };
        out.push((l.rows, value));
    }
    (Tree { nodes }, out)
}
