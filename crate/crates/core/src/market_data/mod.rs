//! Interaction data for a set of markets: loading, id encoding, deduplication,
//! per-combination sparse matrices and dataset summaries.

mod dataset;
mod encoder;
mod loader;
mod matrix;
mod summary;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use dataset::{Dataset, RunKind};
pub(crate) use dataset::write_atomic as write_atomic_pub;
pub use encoder::IdEncoder;
pub use loader::{load_market, read_run_file, MarketFiles, RowError};
pub use matrix::{build_matrix, SparseInteractionMatrix};
pub use summary::{summarize, DatasetSummary, MarketSummary};

/// Short market tag such as `s1` or `t2`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MarketId(Arc<str>);

impl MarketId {
    pub fn new(name: &str) -> Result<Self> {
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(Error::invalid(format!("bad market id {name:?}")));
        }
        Ok(MarketId(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for MarketId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MarketId::new(s)
    }
}

impl Serialize for MarketId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for MarketId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        MarketId::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Parse a comma separated market list, rejecting duplicates.
pub fn parse_market_list(s: &str) -> Result<Vec<MarketId>> {
    let mut out: Vec<MarketId> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m = MarketId::new(part)?;
        if out.contains(&m) {
            return Err(Error::invalid(format!("market {m} listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "train_5core")]
    Train5Core,
    #[serde(rename = "valid_qrel")]
    ValidQrel,
    #[serde(rename = "test_qrel")]
    TestQrel,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Train5Core, Split::ValidQrel, Split::TestQrel];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Train5Core => "train_5core",
            Split::ValidQrel => "valid_qrel",
            Split::TestQrel => "test_qrel",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.tsv", self.as_str())
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

/// A row as read from disk, before id encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub market: MarketId,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub market: MarketId,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunEntry<T> {
    pub user: T,
    pub candidates: Vec<T>,
}

/// Candidate lists to be ranked, one entry per user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFile<T> {
    entries: Vec<RunEntry<T>>,
}

impl<T: Clone + Eq + std::hash::Hash + fmt::Debug> RunFile<T> {
    pub fn new(entries: Vec<RunEntry<T>>) -> Result<Self> {
        let mut users = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !users.insert(e.user.clone()) {
                return Err(Error::invalid(format!("user {:?} appears twice in run", e.user)));
            }
            let mut seen = HashSet::with_capacity(e.candidates.len());
            for c in &e.candidates {
                if !seen.insert(c) {
                    return Err(Error::invalid(format!(
                        "user {:?} has duplicate candidate {:?}",
                        e.user, c
                    )));
                }
            }
        }
        Ok(RunFile { entries })
    }

    pub fn entries(&self) -> &[RunEntry<T>] {
        &self.entries
    }

    /// All (user, candidate) pairs in run order.
    pub fn pairs(&self) -> Vec<(T, T)> {
        self.entries
            .iter()
            .flat_map(|e| e.candidates.iter().map(move |c| (e.user.clone(), c.clone())))
            .collect()
    }

    pub fn n_pairs(&self) -> usize {
        self.entries.iter().map(|e| e.candidates.len()).sum()
    }
}

/// Which markets are unioned into one training matrix for a target market.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationSpec {
    pub id: String,
    pub target: MarketId,
    pub markets: Vec<MarketId>,
    pub exclude_valid_of_target: bool,
}

impl CombinationSpec {
    pub fn new(target: MarketId, markets: Vec<MarketId>, exclude_valid_of_target: bool) -> Result<Self> {
        if !markets.contains(&target) {
            return Err(Error::invalid(format!(
                "combination must contain its target market {target}"
            )));
        }
        let mut dedup: Vec<MarketId> = Vec::with_capacity(markets.len());
        for m in markets {
            if !dedup.contains(&m) {
                dedup.push(m);
            }
        }
        let id = dedup.iter().map(MarketId::as_str).collect::<Vec<_>>().join("-");
        Ok(CombinationSpec {
            id,
            target,
            markets: dedup,
            exclude_valid_of_target,
        })
    }

    pub fn contains(&self, m: &MarketId) -> bool {
        self.markets.contains(m)
    }
}

/// Collapse duplicate (user, item, market, split) rows keeping the last one and
/// force every `train_5core` rating to `force_rating`. Survivors keep their
/// relative order.
pub fn dedupe_and_mark_5core(rows: Vec<Interaction>, force_rating: f64) -> Vec<Interaction> {
    let mut last: HashMap<(u32, u32, MarketId, Split), usize> = HashMap::with_capacity(rows.len());
    for (idx, r) in rows.iter().enumerate() {
        last.insert((r.user, r.item, r.market.clone(), r.split), idx);
    }
    rows.into_iter()
        .enumerate()
        .filter(|(idx, r)| last[&(r.user, r.item, r.market.clone(), r.split)] == *idx)
        .map(|(_, mut r)| {
            if r.split == Split::Train5Core {
                r.rating = force_rating;
            }
            r
        })
        .collect()
}
