use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_rows, GbdtModel, GbdtParams, MODEL_VERSION};
use crate::error::{Error, Result};
use crate::evaluation::{ndcg_of_ranking, DEFAULT_K};
use crate::prerank_features::FeatureTable;
use crate::seed;

/// Users ordered by a seeded hash, then dealt round-robin so every fold is
/// non-empty when there are at least `folds` users.
pub fn assign_folds(users: impl IntoIterator<Item = u32>, folds: usize, seed_v: u64) -> BTreeMap<u32, usize> {
    let mut order: Vec<(u64, u32)> = users.into_iter().map(|u| (seed::mix(seed_v, u as u64, 0x5eed), u)).collect();
    order.sort_unstable();
    order.dedup();
    order.into_iter().enumerate().map(|(k, (_, u))| (u, k % folds)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub version: u32,
    pub folds: usize,
    pub fold_of_user: BTreeMap<u32, usize>,
    pub fold_models: Vec<GbdtModel>,
    /// Out-of-fold probability per training row, in table order.
    #[serde(skip)]
    pub oof: Vec<f64>,
}

pub fn kfold_bagging(table: &FeatureTable, params: &GbdtParams, folds: usize) -> Result<BaggedModel> {
    if folds < 2 {
        return Err(Error::invalid("folds must be >= 2"));
    }
    let labels = table.labels().ok_or_else(|| Error::invalid("bagging needs labels"))?;
    let by_user = table.user_rows();
    if by_user.len() < folds {
        return Err(Error::invalid(format!("{} users cannot fill {folds} folds", by_user.len())));
    }
    let fold_of_user = assign_folds(by_user.keys().copied(), folds, seed::derive(params.seed, "folds"));
    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (mut train, mut held) = (Vec::new(), Vec::new());
            for (r, (u, _)) in table.keys().iter().enumerate() {
                if fold_of_user[u] == f {
                    held.push(r)
                } else {
                    train.push(r)
                }
            }
            (train, held)
        })
        .collect();
    for (f, (train, _)) in fold_rows.iter().enumerate() {
        let pos = train.iter().filter(|&&r| labels[r] == 1.0).count();
        if pos == 0 || pos == train.len() {
            return Err(Error::invalid(format!(
                "fold {f} training rows have a single label class; use fewer folds"
            )));
        }
    }
    let fold_models = fold_rows
        .par_iter()
        .map(|(train, _)| train_rows(table, train, params))
        .collect::<Result<Vec<_>>>()?;
    let mut oof = vec![0.0; table.n_rows()];
    for ((_, held), model) in fold_rows.iter().zip(&fold_models) {
        let sub = table.rows(held);
        for (&r, p) in held.iter().zip(model.predict(&sub)?) {
            oof[r] = p;
        }
    }
    Ok(BaggedModel { version: MODEL_VERSION, folds, fold_of_user, fold_models, oof })
}

impl BaggedModel {
    /// Mean fold probability. Terms are summed in sorted order so the
    /// result does not depend on fold numbering.
    pub fn predict(&self, rows: &FeatureTable) -> Result<Vec<f64>> {
        let per_fold = self.fold_models.iter().map(|m| m.predict(rows)).collect::<Result<Vec<_>>>()?;
        let k = per_fold.len() as f64;
        Ok((0..rows.n_rows())
            .map(|r| {
                let mut v: Vec<f64> = per_fold.iter().map(|p| p[r]).collect();
                v.sort_by(f64::total_cmp);
                v.iter().sum::<f64>() / k
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: BaggedModel = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }
}

/// Mean NDCG@10 over users that have a positive row, ranking each user's
/// rows by score descending then item ascending.
pub fn oof_ndcg(table: &FeatureTable, scores: &[f64]) -> Result<f64> {
    let labels = table.labels().ok_or_else(|| Error::invalid("NDCG needs labels"))?;
    let keys = table.keys();
    let mut total = 0.0;
    let mut n = 0usize;
    for rows in table.user_rows().values() {
        let relevant: BTreeSet<u32> = rows.iter().filter(|&&r| labels[r] == 1.0).map(|&r| keys[r].1).collect();
        if relevant.is_empty() {
            continue;
        }
        let mut ranked: Vec<(u32, f64)> = rows.iter().map(|&r| (keys[r].1, scores[r])).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let items: Vec<u32> = ranked.into_iter().map(|p| p.0).collect();
        total += ndcg_of_ranking(&items, &relevant, DEFAULT_K);
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no user has a positive row"));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub num_leaves: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { num_leaves: vec![15, 31, 63], learning_rate: vec![0.03, 0.05, 0.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub oof_ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GbdtParams,
    pub rows: Vec<GridRow>,
}

/// Every grid point scored by out-of-fold NDCG@10. Equal scores go to the
/// smaller num_leaves, then the smaller learning rate.
pub fn grid_search(table: &FeatureTable, base: &GbdtParams, grid: &Grid, folds: usize) -> Result<GridResult> {
    let mut points: Vec<(usize, f64)> = grid
        .num_leaves
        .iter()
        .flat_map(|&l| grid.learning_rate.iter().map(move |&r| (l, r)))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid("parameter grid is empty"));
    }
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();
    let mut rows = Vec::with_capacity(points.len());
    let mut best: Option<(f64, GbdtParams)> = None;
    for (num_leaves, learning_rate) in points {
        let p = GbdtParams { num_leaves, learning_rate, ..*base };
        let bag = kfold_bagging(table, &p, folds)?;
        let score = oof_ndcg(table, &bag.oof)?;
        log::info!("grid num_leaves={num_leaves} learning_rate={learning_rate}: oof ndcg@10 {score:.5}");
        rows.push(GridRow { num_leaves, learning_rate, oof_ndcg: score });
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, p));
        }
    }
    Ok(GridResult { best: best.unwrap().1, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt_ranker::tests::table;

    #[test]
    fn folds_partition_users() {
        let f = assign_folds(0..23u32, 5, 7);
        assert_eq!(f.len(), 23);
        for k in 0..5 {
            let n = f.values().filter(|&&v| v == k).count();
            assert!(n == 4 || n == 5);
        }
    }

    #[test]
    fn bagged_mean_and_fold_independence() {
        let t = table(5, 600, true);
        let p = GbdtParams { n_rounds: 5, num_leaves: 4, ..Default::default() };
        let bag = kfold_bagging(&t, &p, 3).unwrap();
        let pred = bag.predict(&t).unwrap();
        let per: Vec<Vec<f64>> = bag.fold_models.iter().map(|m| m.predict(&t).unwrap()).collect();
        for r in 0..t.n_rows() {
            let mean = (per[0][r] + per[1][r] + per[2][r]) / 3.0;
            assert!((pred[r] - mean).abs() <= 1e-15);
        }
        let mut rev = bag.clone();
        rev.fold_models.reverse();
        assert_eq!(rev.predict(&t).unwrap(), pred);
        assert!(oof_ndcg(&t, &bag.oof).unwrap() > 0.9);
        assert!(kfold_bagging(&t, &p, 1).is_err());
    }

    #[test]
    fn grid_rows_and_degenerate_lr() {
        let t = table(6, 600, true);
        let base = GbdtParams { n_rounds: 5, ..Default::default() };
        let grid = Grid { num_leaves: vec![4, 8], learning_rate: vec![0.0, 0.3] };
        let res = grid_search(&t, &base, &grid, 3).unwrap();
        assert_eq!(res.rows.len(), 4);
        assert_eq!(res.best.learning_rate, 0.3);
        assert_eq!(res.best.num_leaves, 4);
    }
}
