//! Synthetic multi-market data with shared item factors, so that source
//! markets carry real signal about target-market preferences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{write_atomic_pub, MarketId};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthMarket {
    pub name: String,
    pub users: usize,
    pub min_items: usize,
    pub max_items: usize,
    /// Fraction of the global catalog sold in this market.
    pub item_coverage: f64,
    /// Targets get two held-out positives per user plus valid/test run files.
    pub target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub markets: Vec<SynthMarket>,
    pub n_items: usize,
    pub n_factors: usize,
    /// Divides affinities before Gumbel sampling; lower is more deterministic.
    pub temperature: f64,
    pub popularity_weight: f64,
    /// Scale of each market's own popularity offset on top of the global one.
    pub market_popularity_weight: f64,
    pub negatives: usize,
    pub five_core_min: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let m = |name: &str, users, min_items, max_items, item_coverage, target| SynthMarket {
            name: name.into(),
            users,
            min_items,
            max_items,
            item_coverage,
            target,
        };
        SynthConfig {
            markets: vec![
                m("s1", 500, 10, 30, 0.8, false),
                m("s2", 350, 8, 25, 0.7, false),
                m("s3", 250, 8, 20, 0.6, false),
                m("t1", 600, 2, 6, 0.5, true),
                m("t2", 600, 3, 8, 0.6, true),
            ],
            n_items: 400,
            n_factors: 8,
            temperature: 0.5,
            popularity_weight: 0.5,
            market_popularity_weight: 0.35,
            negatives: 99,
            five_core_min: 5,
            seed: 7,
        }
    }
}

/// What the generator wrote, for checking ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketTruth {
    pub samples: usize,
    pub users: usize,
    pub items: usize,
    pub run_users: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub markets: BTreeMap<String, MarketTruth>,
    pub unique_items: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.markets.is_empty() || self.n_items == 0 || self.n_factors == 0 {
            return Err(Error::Config("synth needs markets, items and factors".into()));
        }
        for m in &self.markets {
            MarketId::new(&m.name).map_err(|e| Error::Config(e.to_string()))?;
            if m.min_items == 0 || m.min_items > m.max_items || !(m.item_coverage > 0.0 && m.item_coverage <= 1.0) {
                return Err(Error::Config(format!("synth market {}: bad item range or coverage", m.name)));
            }
            let available = (m.item_coverage * self.n_items as f64) as usize;
            let need = m.max_items + 2 + if m.target { self.negatives } else { 0 };
            if available < need {
                return Err(Error::Config(format!(
                    "synth market {} sells about {available} items but needs {need}",
                    m.name
                )));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("synth temperature must be positive".into()));
        }
        Ok(())
    }
}

fn header() -> String {
    "userId\titemId\trating\n".to_owned()
}

/// Writes one directory per market under `out` plus `truth.json`.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<SynthTruth> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth/items"));
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let k = cfg.n_factors;
    let factors: Vec<Vec<f64>> = (0..cfg.n_items)
        .map(|_| (0..k).map(|_| std_normal.sample(&mut rng) / (k as f64).sqrt()).collect())
        .collect();
    let popularity: Vec<f64> = (0..cfg.n_items).map(|_| cfg.popularity_weight * std_normal.sample(&mut rng)).collect();
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let item_name = |i: usize| format!("i{i:05}");

    let mut truth = BTreeMap::new();
    let mut all_items = BTreeSet::new();
    for m in &cfg.markets {
        let mut rng = seed::rng(seed::derive(cfg.seed, &format!("synth/market/{}", m.name)));
        let mut catalog: Vec<usize> = (0..cfg.n_items).collect();
        catalog.shuffle(&mut rng);
        catalog.truncate((m.item_coverage * cfg.n_items as f64) as usize);
        catalog.sort_unstable();
        let local: Vec<f64> = (0..cfg.n_items).map(|_| cfg.market_popularity_weight * std_normal.sample(&mut rng)).collect();

        let (mut train, mut five, mut valid_q, mut test_q) = (header(), header(), header(), header());
        let (mut valid_run, mut test_run) = (String::new(), String::new());
        let mut samples = 0usize;
        let mut items_seen = BTreeSet::new();
        for u in 0..m.users {
            let user = format!("{}_u{u:05}", m.name);
            let taste: Vec<f64> = (0..k).map(|_| std_normal.sample(&mut rng)).collect();
            let affinity = |i: usize| -> f64 { 2.0 * taste.iter().zip(&factors[i]).map(|(a, b)| a * b).sum::<f64>() + popularity[i] + local[i] };
            let n = rng.random_range(m.min_items..=m.max_items) + if m.target { 2 } else { 0 };
            let mut keyed: Vec<(f64, usize)> = catalog
                .iter()
                .map(|&i| (affinity(i) / cfg.temperature + gumbel.sample(&mut rng), i))
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut picks: Vec<usize> = keyed.iter().take(n).map(|p| p.1).collect();
            picks.shuffle(&mut rng);
            let rating = |i: usize, rng: &mut rand_chacha::ChaCha8Rng| -> u32 {
                (3.0 + affinity(i) + 0.5 * std_normal.sample(rng)).round().clamp(1.0, 5.0) as u32
            };
            let held: Vec<usize> = if m.target { picks.split_off(picks.len() - 2) } else { Vec::new() };
            let hist_file = if picks.len() >= cfg.five_core_min { &mut five } else { &mut train };
            for &i in &picks {
                let r = rating(i, &mut rng);
                let _ = writeln!(hist_file, "{user}\t{}\t{r}", item_name(i));
                items_seen.insert(i);
            }
            samples += picks.len();
            if m.target {
                let owned: BTreeSet<usize> = picks.iter().chain(&held).copied().collect();
                for (pos, (qrel, run)) in held.iter().zip([(&mut valid_q, &mut valid_run), (&mut test_q, &mut test_run)]) {
                    let r = rating(*pos, &mut rng);
                    let _ = writeln!(qrel, "{user}\t{}\t{r}", item_name(*pos));
                    items_seen.insert(*pos);
                    samples += 1;
                    let pool: Vec<usize> = catalog.iter().copied().filter(|i| !owned.contains(i)).collect();
                    let mut cands: Vec<usize> = pool.choose_multiple(&mut rng, cfg.negatives).copied().collect();
                    cands.push(*pos);
                    cands.shuffle(&mut rng);
                    let _ = write!(run, "{user}");
                    for c in cands {
                        let _ = write!(run, "\t{}", item_name(c));
                    }
                    run.push('\n');
                }
            }
        }
        let dir = out.join(&m.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic_pub(&dir.join("train.tsv"), train.as_bytes())?;
        write_atomic_pub(&dir.join("train_5core.tsv"), five.as_bytes())?;
        if m.target {
            write_atomic_pub(&dir.join("valid_qrel.tsv"), valid_q.as_bytes())?;
            write_atomic_pub(&dir.join("test_qrel.tsv"), test_q.as_bytes())?;
            write_atomic_pub(&dir.join("valid_run.tsv"), valid_run.as_bytes())?;
            write_atomic_pub(&dir.join("test_run.tsv"), test_run.as_bytes())?;
        }
        all_items.extend(items_seen.iter().copied());
        truth.insert(
            m.name.clone(),
            MarketTruth { samples, users: m.users, items: items_seen.len(), run_users: if m.target { m.users } else { 0 } },
        );
    }
    let truth = SynthTruth { markets: truth, unique_items: all_items.len() };
    write_atomic_pub(&out.join("truth.json"), serde_json::to_string_pretty(&truth)?.as_bytes())?;
    Ok(truth)
}
