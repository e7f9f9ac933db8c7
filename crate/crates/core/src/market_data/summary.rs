use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{Interaction, MarketId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketSummary {
    pub market: MarketId,
    pub samples: usize,
    pub users: usize,
    pub items: usize,
    pub rating_mean: f64,
}

/// Per-market counts plus the shared-item overlap matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub markets: Vec<MarketSummary>,
    pub total_samples: usize,
    pub total_users: usize,
    /// Sum of per-market item counts; an item sold in two markets counts twice.
    pub total_items: usize,
    pub unique_items: usize,
    /// `overlap[a][b]` = number of items present in both market a and market b.
    pub overlap: Vec<Vec<usize>>,
}

impl DatasetSummary {
    pub fn overlap_between(&self, a: &MarketId, b: &MarketId) -> Option<usize> {
        let ia = self.markets.iter().position(|m| &m.market == a)?;
        let ib = self.markets.iter().position(|m| &m.market == b)?;
        Some(self.overlap[ia][ib])
    }
}

/// Markets are reported in the order given; rows from other markets are ignored.
pub fn summarize(rows: &[Interaction], markets: &[MarketId]) -> DatasetSummary {
    let mut item_sets: Vec<HashSet<u32>> = vec![HashSet::new(); markets.len()];
    let mut user_sets: Vec<HashSet<u32>> = vec![HashSet::new(); markets.len()];
    let mut samples = vec![0usize; markets.len()];
    let mut rating_sum = vec![0f64; markets.len()];
    for r in rows {
        let Some(k) = markets.iter().position(|m| *m == r.market) else {
            continue;
        };
        item_sets[k].insert(r.item);
        user_sets[k].insert(r.user);
        samples[k] += 1;
        rating_sum[k] += r.rating;
    }
    let overlap = (0..markets.len())
        .map(|a| {
            (0..markets.len())
                .map(|b| item_sets[a].intersection(&item_sets[b]).count())
                .collect()
        })
        .collect();
    let all_users: BTreeSet<u32> = user_sets.iter().flatten().copied().collect();
    let all_items: BTreeSet<u32> = item_sets.iter().flatten().copied().collect();
    DatasetSummary {
        markets: markets
            .iter()
            .enumerate()
            .map(|(k, m)| MarketSummary {
                market: m.clone(),
                samples: samples[k],
                users: user_sets[k].len(),
                items: item_sets[k].len(),
                rating_mean: if samples[k] > 0 { rating_sum[k] / samples[k] as f64 } else { 0.0 },
            })
            .collect(),
        total_samples: samples.iter().sum(),
        total_users: all_users.len(),
        total_items: item_sets.iter().map(HashSet::len).sum(),
        unique_items: all_items.len(),
        overlap,
    }
}
