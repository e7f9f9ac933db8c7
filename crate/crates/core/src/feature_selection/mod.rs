//! Covariate-shift screening, grouped backward elimination under k-fold CV,
//! and null-importance filtering, run in that order.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::percentile;
use crate::gbdt_ranker::{kfold_bagging, oof_ndcg, train, GbdtParams, ImportanceKind};
use crate::prerank_features::FeatureTable;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub name: String,
    pub auc_shift: Option<f64>,
    pub cv_delta: Option<f64>,
    pub actual_gain: Option<f64>,
    pub actual_splits: Option<f64>,
    pub null_gain_p75: Option<f64>,
    pub decision: Decision,
    pub reason: String,
}

impl FeatureRecord {
    fn new(name: &str) -> Self {
        FeatureRecord {
            name: name.to_owned(),
            auc_shift: None,
            cv_delta: None,
            actual_gain: None,
            actual_splits: None,
            null_gain_p75: None,
            decision: Decision::Keep,
            reason: "kept".into(),
        }
    }

    fn drop(&mut self, reason: &str) {
        self.decision = Decision::Drop;
        self.reason = reason.into();
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub records: Vec<FeatureRecord>,
}

impl SelectionReport {
    pub fn kept(&self) -> Vec<&str> {
        self.records.iter().filter(|r| r.decision == Decision::Keep).map(|r| r.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("name\tauc_shift\tcv_delta\tactual_gain\tactual_splits\tnull_gain_p75\tdecision\treason\n");
        for r in &self.records {
            let d = match r.decision {
                Decision::Keep => "keep",
                Decision::Drop => "drop",
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{d}\t{}",
                r.name,
                opt(r.auc_shift),
                opt(r.cv_delta),
                opt(r.actual_gain),
                opt(r.actual_splits),
                opt(r.null_gain_p75),
                r.reason
            );
        }
        out
    }
}

/// P(pos > neg) + ½·P(pos = neg) via average ranks.
pub fn mann_whitney_auc(neg: &[f64], pos: &[f64]) -> Result<f64> {
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::invalid("AUC needs both samples nonempty"));
    }
    let mut all: Vec<(f64, bool)> = neg.iter().map(|&v| (v, false)).chain(pos.iter().map(|&v| (v, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Per feature, AUC of telling test rows from train rows by the raw value.
pub fn covariate_shift_test(train: &FeatureTable, test: &FeatureTable, threshold: f64) -> Result<Vec<FeatureRecord>> {
    if train.n_rows() == 0 || test.n_rows() == 0 {
        return Err(Error::invalid("covariate shift test needs rows in both tables"));
    }
    if train.names() != test.names() {
        return Err(Error::invalid("train and test tables have different columns"));
    }
    train
        .names()
        .par_iter()
        .enumerate()
        .map(|(k, name)| {
            let auc = mann_whitney_auc(train.column_at(k), test.column_at(k))?;
            let mut r = FeatureRecord::new(name);
            r.auc_shift = Some(auc);
            if (auc - 0.5).abs() > threshold {
                r.drop("covariate_shift");
            }
            Ok(r)
        })
        .collect()
}

/// Features sharing the prefix before the first `__`, in first-seen order.
pub fn default_groups(names: &[&str]) -> Vec<Vec<String>> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for n in names {
        let prefix = n.split("__").next().unwrap_or(n).to_owned();
        match groups.iter_mut().find(|g| g.0 == prefix) {
            Some(g) => g.1.push((*n).to_owned()),
            None => groups.push((prefix, vec![(*n).to_owned()])),
        }
    }
    groups.into_iter().map(|g| g.1).collect()
}

pub fn cv_score(table: &FeatureTable, params: &GbdtParams, folds: usize) -> Result<f64> {
    let bag = kfold_bagging(table, params, folds)?;
    oof_ndcg(table, &bag.oof)
}

/// Backward elimination over `groups` in order. `cv_delta` is the score
/// without the group minus the score with it; a group goes when that is
/// ≥ −epsilon. The last remaining group is never removed.
pub fn heuristic_cv_elimination(
    table: &FeatureTable,
    groups: &[Vec<String>],
    params: &GbdtParams,
    folds: usize,
    epsilon: f64,
) -> Result<Vec<FeatureRecord>> {
    let names = table.names();
    let mut records: Vec<FeatureRecord> = names.iter().map(|n| FeatureRecord::new(n)).collect();
    for g in groups {
        if let Some(n) = g.iter().find(|n| !names.contains(&n.as_str())) {
            return Err(Error::invalid(format!("group member {n} is not a table column")));
        }
    }
    let mut current: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let view = |cols: &[String]| table.select(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    let mut baseline = cv_score(&view(&current)?, params, folds)?;
    log::info!("cv elimination baseline ndcg@10 {baseline:.5}");
    for g in groups {
        let without: Vec<String> = current.iter().filter(|c| !g.contains(c)).cloned().collect();
        if without.len() == current.len() {
            continue;
        }
        let mark = |records: &mut Vec<FeatureRecord>, delta: Option<f64>, drop: bool| {
            for r in records.iter_mut().filter(|r| g.contains(&r.name)) {
                r.cv_delta = delta;
                if drop {
                    r.drop("cv_elimination");
                }
            }
        };
        if without.is_empty() {
            mark(&mut records, None, false);
            continue;
        }
        let score = cv_score(&view(&without)?, params, folds)?;
        let delta = score - baseline;
        let drop = delta >= -epsilon;
        log::info!("cv elimination group {:?}: delta {delta:+.5} -> {}", g.first(), if drop { "drop" } else { "keep" });
        mark(&mut records, Some(delta), drop);
        if drop {
            current = without;
            baseline = score;
        }
    }
    Ok(records)
}

/// Keep iff actual gain importance exceeds the `q` quantile of gains over
/// `n_shuffles` label permutations and the feature is split on at least once.
pub fn null_importance_select(
    table: &FeatureTable,
    params: &GbdtParams,
    n_shuffles: usize,
    q: f64,
    seed_v: u64,
) -> Result<Vec<FeatureRecord>> {
    if n_shuffles == 0 {
        return Err(Error::invalid("null importance needs at least one shuffle"));
    }
    let labels = table.labels().ok_or_else(|| Error::invalid("null importance needs labels"))?.to_vec();
    let actual = train(table, params)?;
    let gain = actual.importance(ImportanceKind::Gain);
    let splits = actual.importance(ImportanceKind::Split);
    let nulls: Vec<Vec<f64>> = (0..n_shuffles)
        .into_par_iter()
        .map(|s| {
            let mut y = labels.clone();
            y.shuffle(&mut seed::rng(seed::mix(seed_v, s as u64, 0x6e75)));
            let mut t = table.clone();
            t.set_labels(y)?;
            Ok(train(&t, params)?.importance(ImportanceKind::Gain).into_iter().map(|p| p.1).collect())
        })
        .collect::<Result<_>>()?;
    Ok(gain
        .iter()
        .zip(&splits)
        .enumerate()
        .map(|(f, ((name, g), (_, s)))| {
            let mut null: Vec<f64> = nulls.iter().map(|n| n[f]).collect();
            null.sort_by(f64::total_cmp);
            let p = percentile(&null, q);
            let mut r = FeatureRecord::new(name);
            r.actual_gain = Some(*g);
            r.actual_splits = Some(*s);
            r.null_gain_p75 = Some(p);
            if !(*g > p && *s > 0.0) {
                r.drop("null_importance");
            }
            r
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub shift_threshold: f64,
    pub cv_elimination: bool,
    pub cv_folds: usize,
    pub cv_epsilon: f64,
    pub null_importance: bool,
    pub null_shuffles: usize,
    pub null_quantile: f64,
    /// Boosting rounds for selection fits; the ranker's count when unset.
    pub n_rounds: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            shift_threshold: 0.10,
            cv_elimination: true,
            cv_folds: 5,
            cv_epsilon: 0.0,
            null_importance: true,
            null_shuffles: 50,
            null_quantile: 0.75,
            n_rounds: None,
        }
    }
}

/// The three screens in fixed order, each seeing only the survivors of
/// the previous one.
pub fn select_features(
    train_table: &FeatureTable,
    test_table: &FeatureTable,
    cfg: &SelectionConfig,
    params: &GbdtParams,
    seed_v: u64,
) -> Result<SelectionReport> {
    if train_table.n_columns() == 0 {
        return Err(Error::invalid("feature table has no columns"));
    }
    let params = &GbdtParams { n_rounds: cfg.n_rounds.unwrap_or(params.n_rounds), ..*params };
    let mut records = covariate_shift_test(train_table, test_table, cfg.shift_threshold)?;
    let survivors = |records: &[FeatureRecord]| -> Vec<String> {
        records.iter().filter(|r| r.decision == Decision::Keep).map(|r| r.name.clone()).collect()
    };
    let merge = |records: &mut [FeatureRecord], stage: Vec<FeatureRecord>| {
        for s in stage {
            let r = records.iter_mut().find(|r| r.name == s.name).expect("stage output names are inputs");
            r.cv_delta = s.cv_delta.or(r.cv_delta);
            r.actual_gain = s.actual_gain.or(r.actual_gain);
            r.actual_splits = s.actual_splits.or(r.actual_splits);
            r.null_gain_p75 = s.null_gain_p75.or(r.null_gain_p75);
            if s.decision == Decision::Drop {
                r.drop(&s.reason);
            }
        }
    };
    if cfg.cv_elimination {
        let keep = survivors(&records);
        if !keep.is_empty() {
            let t = train_table.select(&keep.iter().map(String::as_str).collect::<Vec<_>>())?;
            let groups = default_groups(&t.names());
            let stage = heuristic_cv_elimination(&t, &groups, params, cfg.cv_folds, cfg.cv_epsilon)?;
            merge(&mut records, stage);
        }
    }
    if cfg.null_importance {
        let keep = survivors(&records);
        if !keep.is_empty() {
            let t = train_table.select(&keep.iter().map(String::as_str).collect::<Vec<_>>())?;
            let stage = null_importance_select(&t, params, cfg.null_shuffles, cfg.null_quantile, seed_v)?;
            merge(&mut records, stage);
        }
    }
    Ok(SelectionReport { records })
}
