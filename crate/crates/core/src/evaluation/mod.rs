//! NDCG@k over ranked candidate lists, per-market aggregation with weights,
//! and the `user<TAB>item<TAB>score` run format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{Debug, Display, Write as _};
use std::fs;
use std::hash::Hash;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::MarketId;

pub const DEFAULT_K: usize = 10;

/// Relevant items per user (binary relevance).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Qrels<T: Ord> {
    map: BTreeMap<T, BTreeSet<T>>,
}

impl<T: Ord + Clone> Qrels<T> {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (T, T)>) -> Self {
        let mut map: BTreeMap<T, BTreeSet<T>> = BTreeMap::new();
        for (u, i) in pairs {
            map.entry(u).or_default().insert(i);
        }
        Qrels { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn relevant(&self, user: &T) -> Option<&BTreeSet<T>> {
        self.map.get(user)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, &BTreeSet<T>)> {
        self.map.iter()
    }
}

/// `user<TAB>item` lines; a `userId` header and a trailing rating column are ignored.
pub fn read_qrels(path: &Path) -> Result<Qrels<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (idx == 0 && line.starts_with("userId")) {
            continue;
        }
        let mut f = line.split('\t');
        match (f.next(), f.next()) {
            (Some(u), Some(i)) if !u.trim().is_empty() && !i.trim().is_empty() => {
                pairs.push((u.trim().to_owned(), i.trim().to_owned()))
            }
            _ => {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line: idx + 1,
                    message: "expected user<TAB>item".into(),
                })
            }
        }
    }
    Ok(Qrels::from_pairs(pairs))
}

/// Users in input order; each user's items in rank order.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedRun<T> {
    entries: Vec<(T, Vec<(T, f64)>)>,
}

impl<T: Clone + Ord + Hash + Debug> RankedRun<T> {
    /// Sorts each list by score descending, then item ascending.
    pub fn from_scores(entries: Vec<(T, Vec<(T, f64)>)>) -> Result<Self> {
        let entries = entries
            .into_iter()
            .map(|(u, mut items)| {
                items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                (u, items)
            })
            .collect();
        Self::from_ranked(entries)
    }

    /// Trusts the given order; checks uniqueness only.
    pub fn from_ranked(entries: Vec<(T, Vec<(T, f64)>)>) -> Result<Self> {
        let mut users = BTreeSet::new();
        for (u, items) in &entries {
            if !users.insert(u) {
                return Err(Error::invalid(format!("user {u:?} appears twice in run")));
            }
            let mut seen = BTreeSet::new();
            if let Some((i, _)) = items.iter().find(|(i, _)| !seen.insert(i)) {
                return Err(Error::invalid(format!("item {i:?} repeated for user {u:?}")));
            }
            if items.iter().any(|(_, s)| !s.is_finite()) {
                return Err(Error::invalid(format!("non-finite score for user {u:?}")));
            }
        }
        Ok(RankedRun { entries })
    }

    pub fn entries(&self) -> &[(T, Vec<(T, f64)>)] {
        &self.entries
    }

    pub fn n_users(&self) -> usize {
        self.entries.len()
    }
}

/// NDCG@k of one ranked list with binary gains.
pub fn ndcg_of_ranking<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdcgReport<T> {
    /// Qrel users in qrel order.
    pub per_user: Vec<(T, f64)>,
    pub mean: f64,
}

/// Every qrel user must be in the run; run users without qrels are ignored.
pub fn ndcg_at_k<T>(run: &RankedRun<T>, qrels: &Qrels<T>, k: usize) -> Result<NdcgReport<T>>
where
    T: Clone + Ord + Hash + Debug + Send + Sync,
{
    let index: HashMap<&T, usize> = run.entries.iter().enumerate().map(|(n, (u, _))| (u, n)).collect();
    let missing: Vec<&T> = qrels.map.keys().filter(|u| !index.contains_key(u)).collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(10).map(|u| format!("{u:?}")).collect();
        return Err(Error::invalid(format!(
            "{} qrel users missing from run: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 10 { ", ..." } else { "" }
        )));
    }
    let users: Vec<(&T, &BTreeSet<T>)> = qrels.map.iter().collect();
    let per_user: Vec<(T, f64)> = users
        .par_iter()
        .map(|&(u, rel)| {
            let ranked: Vec<&T> = run.entries[index[u]].1.iter().map(|(i, _)| i).collect();
            let rel_refs: BTreeSet<&T> = rel.iter().collect();
            (u.clone(), ndcg_of_ranking(&ranked, &rel_refs, k))
        })
        .collect();
    let mean = if per_user.is_empty() { 0.0 } else { per_user.iter().map(|p| p.1).sum::<f64>() / per_user.len() as f64 };
    Ok(NdcgReport { per_user, mean })
}

/// Σ w·s / Σ w over the markets in `scores`.
pub fn weighted_market_score(scores: &BTreeMap<MarketId, f64>, weights: &BTreeMap<MarketId, f64>) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (m, s) in scores {
        let w = *weights.get(m).ok_or_else(|| Error::invalid(format!("no weight for market {m}")))?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid(format!("weight for market {m} must be non-negative")));
        }
        num += w * s;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::invalid("market weights must sum to a positive value"));
    }
    Ok(num / den)
}

/// Per-market and combined NDCG@10 of one scorer over ten market
/// combinations: (first target, second target, combined).
pub const REFERENCE_SCORE_TABLE: [(f64, f64, f64); 10] = [
    (0.6843, 0.5797, 0.6142),
    (0.6850, 0.5795, 0.6143),
    (0.6776, 0.5589, 0.5980),
    (0.6789, 0.5596, 0.5989),
    (0.6839, 0.5793, 0.6138),
    (0.6786, 0.5793, 0.6121),
    (0.6847, 0.5604, 0.6014),
    (0.6781, 0.5783, 0.6112),
    (0.6789, 0.5601, 0.5992),
    (0.6805, 0.5606, 0.6002),
];

/// Least-squares w in c ≈ w·a + (1−w)·b.
pub fn fit_two_market_weight(rows: &[(f64, f64, f64)]) -> Result<f64> {
    let num: f64 = rows.iter().map(|&(a, b, c)| (c - b) * (a - b)).sum();
    let den: f64 = rows.iter().map(|&(a, b, _)| (a - b) * (a - b)).sum();
    if den == 0.0 {
        return Err(Error::invalid("weight fit needs rows where the two scores differ"));
    }
    Ok(num / den)
}

/// Weight of the first target market, fitted from `REFERENCE_SCORE_TABLE`.
pub fn default_first_target_weight() -> f64 {
    fit_two_market_weight(&REFERENCE_SCORE_TABLE).expect("reference table is non-degenerate")
}

/// Default weights for two target markets; `None` for any other count.
pub fn default_market_weights(targets: &[MarketId]) -> Option<BTreeMap<MarketId, f64>> {
    match targets {
        [a, b] => {
            let w = default_first_target_weight();
            Some(BTreeMap::from([(a.clone(), w), (b.clone(), 1.0 - w)]))
        }
        [a] => Some(BTreeMap::from([(a.clone(), 1.0)])),
        _ => None,
    }
}

/// One line per (user, item), items in rank order, scores to 6 decimals.
pub fn emit_run_file<T: Display>(run: &RankedRun<T>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, items) in &run.entries {
        for (i, s) in items {
            let _ = writeln!(out, "{u}\t{i}\t{s:.6}");
        }
    }
    crate::market_data::write_atomic_pub(path, out.as_bytes())
}

/// Reads `emit_run_file` output back; file order is the ranking.
pub fn read_ranked_run(path: &Path) -> Result<RankedRun<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| Error::Parse {
            file: path.display().to_string(),
            line: idx + 1,
            message: message.into(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err("expected user<TAB>item<TAB>score"));
        }
        let score: f64 = f[2].trim().parse().map_err(|_| err("bad score"))?;
        let user = f[0].to_owned();
        let slot = *index.entry(user.clone()).or_insert_with(|| {
            entries.push((user, Vec::new()));
            entries.len() - 1
        });
        entries[slot].1.push((f[1].to_owned(), score));
    }
    RankedRun::from_ranked(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

/// Linear interpolation between order statistics; `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Quantiles {
            p10: percentile(&v, 0.10),
            p25: percentile(&v, 0.25),
            p50: percentile(&v, 0.50),
            p75: percentile(&v, 0.75),
            p90: percentile(&v, 0.90),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketMetric {
    pub users: usize,
    pub ndcg_at_10: f64,
    pub quantiles: Quantiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_market: BTreeMap<MarketId, MarketMetric>,
    pub weights: BTreeMap<MarketId, f64>,
    pub weighted: Option<f64>,
}

impl MetricReport {
    /// `weighted` is filled only when every market has a weight.
    pub fn build(per_market: BTreeMap<MarketId, NdcgReport<String>>, weights: BTreeMap<MarketId, f64>) -> Result<Self> {
        let per_market: BTreeMap<MarketId, MarketMetric> = per_market
            .into_iter()
            .map(|(m, r)| {
                let values: Vec<f64> = r.per_user.iter().map(|p| p.1).collect();
                let metric = MarketMetric { users: values.len(), ndcg_at_10: r.mean, quantiles: Quantiles::of(&values) };
                (m, metric)
            })
            .collect();
        let scores: BTreeMap<MarketId, f64> = per_market.iter().map(|(m, v)| (m.clone(), v.ndcg_at_10)).collect();
        let weighted = if !scores.is_empty() && scores.keys().all(|m| weights.contains_key(m)) {
            Some(weighted_market_score(&scores, &weights)?)
        } else {
            None
        };
        Ok(MetricReport { per_market, weights, weighted })
    }
}
