use std::collections::BTreeSet;

use super::table::{ColumnInfo, ColumnSource};
use crate::error::Result;
use crate::market_data::{CombinationSpec, Dataset, MarketId, SparseInteractionMatrix, Split};

fn stat(name: String, stat: &str, scope: &str) -> ColumnInfo {
    ColumnInfo { name, source: ColumnSource::Statistic { name: stat.into(), scope: scope.into() } }
}

fn missing(of: &str) -> ColumnInfo {
    ColumnInfo { name: format!("{of}__missing"), source: ColumnSource::MissingIndicator { of: of.into() } }
}

/// Count, log-count and mean-rating columns for one matrix.
fn scope_columns(m: &SparseInteractionMatrix, keys: &[(u32, u32)], scope: &str) -> Vec<(ColumnInfo, Vec<f64>)> {
    let item_count: Vec<f64> = keys.iter().map(|&(_, i)| m.item_degree(i) as f64).collect();
    let user_len: Vec<f64> = keys.iter().map(|&(u, _)| m.user_degree(u) as f64).collect();
    let mean = |vals: &[f64]| if vals.is_empty() { None } else { Some(vals.iter().sum::<f64>() / vals.len() as f64) };
    let item_mean: Vec<Option<f64>> = keys.iter().map(|&(_, i)| mean(m.item_col(i).1)).collect();
    let user_mean: Vec<Option<f64>> = keys.iter().map(|&(u, _)| mean(m.user_row(u).1)).collect();
    let mut out = Vec::new();
    let mut push = |base: &str, values: Vec<f64>| {
        out.push((stat(format!("stat__{base}__{scope}"), base, scope), values));
    };
    push("item_count", item_count.clone());
    push("log1p_item_count", item_count.iter().map(|c| c.ln_1p()).collect());
    push("user_hist_len", user_len.clone());
    push("log1p_user_hist_len", user_len.iter().map(|c| c.ln_1p()).collect());
    for (base, vals) in [("item_mean_rating", item_mean), ("user_mean_rating", user_mean)] {
        let name = format!("stat__{base}__{scope}");
        out.push((stat(name.clone(), base, scope), vals.iter().map(|v| v.unwrap_or(0.0)).collect()));
        out.push((missing(&name), vals.iter().map(|v| if v.is_some() { 0.0 } else { 1.0 }).collect()));
    }
    out
}

/// Fixed statistic catalog over the all-markets union and the target
/// alone, both with the target's valid positives removed, plus the number
/// of markets whose interactions contain the candidate item.
pub fn global_statistic_features(ds: &Dataset, target: &MarketId, keys: &[(u32, u32)]) -> Result<Vec<(ColumnInfo, Vec<f64>)>> {
    let all = CombinationSpec::new(target.clone(), ds.markets.clone(), true)?;
    let own = CombinationSpec::new(target.clone(), vec![target.clone()], true)?;
    let mut out = scope_columns(&ds.matrix(&all)?, keys, "all");
    out.extend(scope_columns(&ds.matrix(&own)?, keys, "target"));
    let overlap = item_market_overlap(ds, target);
    out.push((
        stat("stat__item_market_overlap".into(), "item_market_overlap", "all"),
        keys.iter().map(|&(_, i)| overlap[i as usize] as f64).collect(),
    ));
    Ok(out)
}

/// Per item, how many markets contain it once the target's valid pairs are
/// held out.
pub fn item_market_overlap(ds: &Dataset, target: &MarketId) -> Vec<usize> {
    let held: BTreeSet<(u32, u32)> = ds.qrel_pairs(target, Split::ValidQrel).into_iter().collect();
    let mut sets: Vec<BTreeSet<&MarketId>> = vec![BTreeSet::new(); ds.n_items()];
    for r in ds.interactions.iter().filter(|r| r.split != Split::TestQrel) {
        if !held.contains(&(r.user, r.item)) {
            sets[r.item as usize].insert(&r.market);
        }
    }
    sets.into_iter().map(|s| s.len()).collect()
}
