use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{CombinationSpec, MarketId};

/// The cross-market combinations scored for one target: every market, all
/// sources with the target, the target alone, all targets, then each
/// proper subset of sources (larger first) with the target. Duplicate
/// market sets are dropped. Every spec excludes the target's valid positives.
pub fn default_combinations(target: &MarketId, markets: &[MarketId], targets: &[MarketId]) -> Result<Vec<CombinationSpec>> {
    if !markets.contains(target) {
        return Err(Error::invalid(format!("target {target} is not among the markets")));
    }
    let ordered = |set: &[&MarketId]| -> Vec<MarketId> { markets.iter().filter(|m| set.contains(m)).cloned().collect() };
    let sources: Vec<&MarketId> = markets.iter().filter(|m| !targets.contains(m)).collect();
    let mut sets: Vec<Vec<MarketId>> = vec![markets.to_vec()];
    let with_target = |s: &[&MarketId]| {
        let mut v: Vec<&MarketId> = s.to_vec();
        v.push(target);
        ordered(&v)
    };
    sets.push(with_target(&sources));
    sets.push(vec![target.clone()]);
    let all_targets: Vec<&MarketId> = targets.iter().filter(|t| markets.contains(t)).collect();
    sets.push(ordered(&all_targets));
    for size in (1..sources.len()).rev() {
        for subset in subsets(&sources, size) {
            sets.push(with_target(&subset));
        }
    }
    let mut out: Vec<CombinationSpec> = Vec::new();
    for s in sets {
        if s.contains(target) && !out.iter().any(|c| c.markets == s) {
            out.push(CombinationSpec::new(target.clone(), s, true)?);
        }
    }
    Ok(out)
}

/// Size-`k` subsets in lexicographic index order.
fn subsets<'a>(items: &[&'a MarketId], k: usize) -> Vec<Vec<&'a MarketId>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        for mut rest in subsets(&items[i + 1..], k - 1) {
            rest.insert(0, items[i]);
            out.push(rest);
        }
    }
    out
}

/// Which combinations a plan entry covers: `"default"`, or a list of
/// dash-joined market names where `target` stands for the current target
/// (e.g. `"s1-target"`); `"default"` may appear inside the list too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CombinationSelector {
    Named(String),
    List(Vec<String>),
}

impl Default for CombinationSelector {
    fn default() -> Self {
        CombinationSelector::Named("default".into())
    }
}

impl CombinationSelector {
    pub fn resolve(&self, target: &MarketId, markets: &[MarketId], targets: &[MarketId]) -> Result<Vec<CombinationSpec>> {
        let items: Vec<&str> = match self {
            CombinationSelector::Named(s) => vec![s.as_str()],
            CombinationSelector::List(v) => v.iter().map(String::as_str).collect(),
        };
        let mut out: Vec<CombinationSpec> = Vec::new();
        for item in items {
            let specs = match item {
                "default" => default_combinations(target, markets, targets)?,
                "all" => vec![CombinationSpec::new(target.clone(), markets.to_vec(), true)?],
                expr => {
                    let mut chosen = Vec::new();
                    for name in expr.split('-') {
                        let m = if name == "target" {
                            target.clone()
                        } else {
                            markets
                                .iter()
                                .find(|m| m.as_str() == name)
                                .cloned()
                                .ok_or_else(|| Error::Config(format!("unknown market {name:?} in combination {expr:?}")))?
                        };
                        chosen.push(m);
                    }
                    let ordered: Vec<MarketId> = markets.iter().filter(|m| chosen.contains(m)).cloned().collect();
                    if !ordered.contains(target) {
                        return Err(Error::Config(format!("combination {expr:?} does not contain target {target}")));
                    }
                    vec![CombinationSpec::new(target.clone(), ordered, true)?]
                }
            };
            for s in specs {
                if !out.iter().any(|c| c.markets == s.markets) {
                    out.push(s);
                }
            }
        }
        Ok(out)
    }
}
