//! Histogram gradient boosting on logistic loss with leaf-wise trees,
//! user-level k-fold bagging and a small parameter grid.

mod bagging;
mod bins;
mod tree;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prerank_features::FeatureTable;
use crate::seed;

pub use bagging::{assign_folds, grid_search, kfold_bagging, oof_ndcg, BaggedModel, Grid, GridResult, GridRow};
pub use bins::{bin_of, build_bins};
pub use tree::{beats, split_gain, Node, SplitChoice, Tree};

use bins::BinnedColumns;
use tree::{grow_tree, GrowParams};

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub min_data_in_leaf: usize,
    pub l2_leaf_reg: f64,
    pub max_bins: usize,
    pub feature_fraction: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_leaves: 31,
            learning_rate: 0.05,
            n_rounds: 100,
            min_data_in_leaf: 20,
            l2_leaf_reg: 1.0,
            max_bins: 255,
            feature_fraction: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    /// A zero learning rate is accepted so a grid may include it.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("gbdt: {m}")));
        if self.num_leaves < 2 {
            return bad("num_leaves must be >= 2");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.n_rounds == 0 {
            return bad("n_rounds must be >= 1");
        }
        if self.min_data_in_leaf == 0 {
            return bad("min_data_in_leaf must be >= 1");
        }
        if !(self.l2_leaf_reg >= 0.0 && self.l2_leaf_reg.is_finite()) {
            return bad("l2_leaf_reg must be non-negative");
        }
        if !(2..=255).contains(&self.max_bins) {
            return bad("max_bins must lie in 2..=255");
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return bad("feature_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub params: GbdtParams,
    pub base_score: f64,
    pub features: Vec<String>,
    pub thresholds: Vec<Vec<f64>>,
    pub trees: Vec<Tree>,
    /// Training logloss before the first tree and after each kept tree.
    pub train_logloss: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of −[y ln p + (1−y) ln(1−p)] written on margins.
pub fn logloss(margins: &[f64], labels: &[f64]) -> f64 {
    let s: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&f, &y)| f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f)
        .sum();
    s / margins.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    Gain,
    Split,
}

// Margins beyond this saturate σ to exactly 0 or 1 in f64.
const MARGIN_CLAMP: f64 = 35.0;

impl GbdtModel {
    pub fn margin(&self, x: impl Fn(usize) -> f64) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.leaf_value(&x)).sum();
        (self.base_score + self.params.learning_rate * s).clamp(-MARGIN_CLAMP, MARGIN_CLAMP)
    }

    pub fn predict(&self, rows: &FeatureTable) -> Result<Vec<f64>> {
        let cols = self
            .features
            .iter()
            .map(|n| rows.column(n).ok_or_else(|| Error::invalid(format!("feature column {n} missing from rows"))))
            .collect::<Result<Vec<&[f64]>>>()?;
        Ok((0..rows.n_rows())
            .into_par_iter()
            .map(|r| sigmoid(self.margin(|f| cols[f][r])))
            .collect())
    }

    pub fn importance(&self, kind: ImportanceKind) -> Vec<(String, f64)> {
        let mut acc = vec![0.0; self.features.len()];
        for t in &self.trees {
            for (f, gain) in t.splits() {
                acc[f] += match kind {
                    ImportanceKind::Gain => gain,
                    ImportanceKind::Split => 1.0,
                };
            }
        }
        self.features.iter().cloned().zip(acc).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbdtModel = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }
}

pub fn train(table: &FeatureTable, params: &GbdtParams) -> Result<GbdtModel> {
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    train_rows(table, &rows, params)
}

/// Boosting on a row subset. Stops early when a tree finds no split.
pub(crate) fn train_rows(table: &FeatureTable, rows: &[usize], params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let all = table.labels().ok_or_else(|| Error::invalid("gbdt training needs labels"))?;
    let y: Vec<f64> = rows.iter().map(|&r| all[r]).collect();
    let pos = y.iter().sum::<f64>();
    if y.is_empty() || pos == 0.0 || pos == y.len() as f64 {
        return Err(Error::invalid("gbdt training needs both label classes"));
    }
    let prior = pos / y.len() as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let n_feat = table.n_columns();
    let columns: Vec<&[f64]> = (0..n_feat).map(|f| table.column_at(f)).collect();
    let thresholds: Vec<Vec<f64>> = columns
        .par_iter()
        .map(|c| {
            let v: Vec<f64> = rows.iter().map(|&r| c[r]).collect();
            build_bins(&v, params.max_bins)
        })
        .collect();
    let data = BinnedColumns::new(&columns, &thresholds, rows);
    let splittable: Vec<usize> = (0..n_feat).filter(|&f| data.n_bins[f] > 1).collect();
    let grow = GrowParams {
        num_leaves: params.num_leaves,
        min_data_in_leaf: params.min_data_in_leaf,
        l2: params.l2_leaf_reg,
    };
    let n = y.len();
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::new();
    let mut losses = vec![logloss(&margin, &y)];
    for round in 0..params.n_rounds {
        if splittable.is_empty() {
            break;
        }
        for r in 0..n {
            let p = sigmoid(margin[r]);
            grad[r] = p - y[r];
            hess[r] = p * (1.0 - p);
        }
        let features = if params.feature_fraction < 1.0 {
            let take = ((params.feature_fraction * splittable.len() as f64).ceil() as usize).max(1);
            let mut rng = seed::rng(seed::mix(params.seed, round as u64, 0));
            let mut idx: Vec<usize> = sample(&mut rng, splittable.len(), take).into_iter().map(|k| splittable[k]).collect();
            idx.sort_unstable();
            idx
        } else {
            splittable.clone()
        };
        let (tree, leaves) = grow_tree(&data, &thresholds, &features, (0..n as u32).collect(), &grad, &hess, &grow);
        if tree.nodes.len() == 1 {
            break;
        }
        for (leaf_rows, value) in leaves {
            for r in leaf_rows {
                margin[r as usize] += params.learning_rate * value;
            }
        }
        trees.push(tree);
        losses.push(logloss(&margin, &y));
    }
    Ok(GbdtModel {
        version: MODEL_VERSION,
        params: *params,
        base_score,
        features: table.names().into_iter().map(String::from).collect(),
        thresholds,
        trees,
        train_logloss: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prerank_features::ColumnInfo;
    use rand::Rng;

    pub(crate) fn table(seed_v: u64, n: usize, informative: bool) -> FeatureTable {
        let mut rng = seed::rng(seed_v);
        let keys = (0..n as u32).map(|r| (r / 10, r)).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        let x: Vec<f64> = y.iter().map(|&l| if informative { l } else { 0.0 }).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut t = FeatureTable::new(keys, Some(y)).unwrap();
        t.add_column(ColumnInfo::other("x"), x).unwrap();
        t.add_column(ColumnInfo::other("noise"), noise).unwrap();
        t
    }

    #[test]
    fn binary_feature_learned() {
        let t = table(1, 400, true);
        let p = GbdtParams { learning_rate: 0.3, n_rounds: 20, ..Default::default() };
        let m = train(&t, &p).unwrap();
        assert!(m.train_logloss.last().unwrap() < &0.05, "{:?}", m.train_logloss);
        assert!(m.train_logloss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let imp = m.importance(ImportanceKind::Split);
        let total: usize = m.trees.iter().map(|t| t.nodes.len() - t.n_leaves()).sum();
        assert_eq!(imp.iter().map(|p| p.1).sum::<f64>(), total as f64);
        assert!(m.importance(ImportanceKind::Gain).iter().all(|p| p.1 >= 0.0));
    }

    #[test]
    fn constant_features_give_base_only() {
        let t = table(2, 100, false).select(&["x"]).unwrap();
        let m = train(&t, &GbdtParams::default()).unwrap();
        assert!(m.trees.is_empty());
        let p = m.predict(&t).unwrap();
        assert!(p.iter().all(|&v| (v - sigmoid(m.base_score)).abs() < 1e-15));
    }

    #[test]
    fn balanced_prior_base_zero_and_errors() {
        let mut t = FeatureTable::new(vec![(0, 0), (0, 1)], Some(vec![0.0, 1.0])).unwrap();
        t.add_column(ColumnInfo::other("a"), vec![0.0, 1.0]).unwrap();
        let m = train(&t, &GbdtParams { min_data_in_leaf: 1, ..Default::default() }).unwrap();
        assert_eq!(m.base_score, 0.0);
        let mut one = FeatureTable::new(vec![(0, 0), (0, 1)], Some(vec![1.0, 1.0])).unwrap();
        one.add_column(ColumnInfo::other("a"), vec![0.0, 1.0]).unwrap();
        assert!(train(&one, &GbdtParams::default()).is_err());
        assert!(train(&t, &GbdtParams { n_rounds: 0, ..Default::default() }).is_err());
        let bad = t.select(&[]).unwrap();
        assert!(m.predict(&bad).unwrap_err().to_string().contains('a'));
    }

    #[test]
    fn json_round_trip() {
        let t = table(3, 300, true);
        let m = train(&t, &GbdtParams { n_rounds: 5, num_leaves: 4, ..Default::default() }).unwrap();
        let s = m.to_json().unwrap();
        assert_eq!(GbdtModel::from_json(&s).unwrap(), m);
        assert_eq!(train(&t, &m.params).unwrap().to_json().unwrap(), s);
    }

    #[test]
    fn feature_fraction_is_deterministic() {
        let t = table(4, 300, true);
        let p = GbdtParams { feature_fraction: 0.5, n_rounds: 10, ..Default::default() };
        assert_eq!(train(&t, &p).unwrap(), train(&t, &p).unwrap());
    }
}
