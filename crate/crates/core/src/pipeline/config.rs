use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::feature_selection::SelectionConfig;
use crate::gbdt_ranker::{GbdtParams, Grid};
use crate::market_data::MarketId;
use crate::prerank_features::{CombinationSelector, PlanEntry, ScorerParams, Word2VecParams};

fn default_workspace() -> PathBuf {
    PathBuf::from("workspace")
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_force_rating() -> f64 {
    5.0
}

fn yes() -> bool {
    true
}

fn default_folds() -> usize {
    10
}

fn default_plan() -> Vec<PlanEntry> {
    ScorerParams::memory_defaults()
        .into_iter()
        .map(|params| PlanEntry { combinations: CombinationSelector::default(), params })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrerankConfig {
    #[serde(default = "default_plan")]
    pub plan: Vec<PlanEntry>,
    #[serde(default = "yes")]
    pub statistics: bool,
    #[serde(default = "yes")]
    pub external_embeddings: bool,
    /// Pretrained `item<TAB>vector` file; trained on all markets when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_path: Option<PathBuf>,
    #[serde(default)]
    pub external_word2vec: Word2VecParams,
}

impl Default for PrerankConfig {
    fn default() -> Self {
        PrerankConfig {
            plan: default_plan(),
            statistics: true,
            external_embeddings: true,
            external_path: None,
            external_word2vec: Word2VecParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerConfig {
    #[serde(default)]
    pub params: GbdtParams,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub grid_search: bool,
    #[serde(default)]
    pub grid: Grid,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig { params: GbdtParams::default(), folds: default_folds(), grid_search: false, grid: Grid::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Per-market weights; two targets default to the fitted pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workspace")]
    pub workspace: PathBuf,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub markets: Vec<String>,
    pub targets: Vec<String>,
    #[serde(default = "default_force_rating")]
    pub force_rating: f64,
    /// Worker threads for pre-rank plans; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub prerank: PrerankConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub ranker: RankerConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are taken from the config file's directory
        if let Some(base) = path.parent() {
            for p in [&mut cfg.workspace, &mut cfg.data_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(p) = cfg.prerank.external_path.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.markets.is_empty() {
            return bad("at least one market is required".into());
        }
        let markets = self.market_ids()?;
        for (k, m) in markets.iter().enumerate() {
            if markets[..k].contains(m) {
                return bad(format!("market {m} listed twice"));
            }
        }
        if self.targets.is_empty() {
            return bad("at least one target market is required".into());
        }
        for t in &self.targets {
            if !self.markets.contains(t) {
                return bad(format!("target {t} is not in markets"));
            }
        }
        if self.ranker.folds < 2 {
            return bad("ranker.folds must be >= 2".into());
        }
        self.ranker.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.ranker.grid_search && (self.ranker.grid.num_leaves.is_empty() || self.ranker.grid.learning_rate.is_empty()) {
            return bad("ranker.grid must be nonempty when grid_search is on".into());
        }
        let s = &self.selection;
        if s.cv_folds < 2 || s.null_shuffles == 0 || !(0.0..=1.0).contains(&s.null_quantile) {
            return bad("selection needs cv_folds >= 2, null_shuffles >= 1 and null_quantile in [0, 1]".into());
        }
        if !(1.0..=5.0).contains(&self.force_rating) {
            return bad("force_rating must lie in [1, 5]".into());
        }
        if let Some(w) = &self.evaluation.weights {
            if w.values().any(|v| !(*v >= 0.0)) || w.values().sum::<f64>() <= 0.0 {
                return bad("evaluation.weights must be non-negative with a positive sum".into());
            }
        }
        Ok(())
    }

    pub fn market_ids(&self) -> Result<Vec<MarketId>> {
        self.markets.iter().map(|m| MarketId::new(m).map_err(|e| Error::Config(e.to_string()))).collect()
    }

    pub fn target_ids(&self) -> Result<Vec<MarketId>> {
        self.targets.iter().map(|m| MarketId::new(m).map_err(|e| Error::Config(e.to_string()))).collect()
    }

    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            rayon::current_num_threads()
        } else {
            self.workers
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
markets = ["s1", "t1", "t2"]
targets = ["t1", "t2"]

[[prerank.plan]]
combinations = "default"
params = { scorer = "item_cf", top_k = 50 }

[[prerank.plan]]
combinations = ["target", "s1-target"]
params = { scorer = "lightgcn", metric = "cosine", lightgcn = { dim = 8, epochs = 2 } }

[ranker]
folds = 3
params = { num_leaves = 7 }

[evaluation]
weights = { t1 = 1.0, t2 = 2.0 }
"#;

    #[test]
    fn parse_round_trip() {
        let cfg = PipelineConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.prerank.plan.len(), 2);
        assert_eq!(cfg.ranker.params.num_leaves, 7);
        assert_eq!(cfg.ranker.params.n_rounds, GbdtParams::default().n_rounds);
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        let d = PipelineConfig::from_toml("markets = [\"t1\"]\ntargets = [\"t1\"]\n").unwrap();
        assert_eq!(d.prerank.plan.len(), 5);
        assert_eq!(PipelineConfig::from_toml(&d.to_toml().unwrap()).unwrap(), d);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let unknown = format!("{SAMPLE}\n[extra]\nx = 1\n");
        assert!(matches!(PipelineConfig::from_toml(&unknown), Err(Error::Config(_))));
        let bad_param = SAMPLE.replace("top_k = 50", "top_kk = 50");
        assert!(PipelineConfig::from_toml(&bad_param).is_err());
        let folds = SAMPLE.replace("folds = 3", "folds = 1");
        assert!(PipelineConfig::from_toml(&folds).is_err());
        let target = SAMPLE.replace("targets = [\"t1\", \"t2\"]", "targets = [\"t9\"]");
        assert!(PipelineConfig::from_toml(&target).is_err());
    }
}
