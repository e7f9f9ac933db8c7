use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::combinations::CombinationSelector;
use super::table::{ColumnInfo, ColumnSource, FeatureTable};
use crate::error::{Error, Result};
use crate::graph_embeddings::{
    generate_walks, train_lightgcn, train_skipgram, user_history_sequences, users_from_item_means, EmbeddingScorer,
    LightGcnParams, Metric, NodeGraph, SkipGramParams, WalkParams,
};
use crate::market_data::{CombinationSpec, Dataset, MarketId, RunFile, SparseInteractionMatrix};
use crate::memory_cf::{
    item_cosine_similarity, llr_item_similarity, swing_similarity, user_cosine_similarity, BiGraphScorer,
    ItemBasedScorer, SwingParams, UserBasedScorer, DEFAULT_TOP_K,
};
use crate::scoring::CandidateScorer;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfParams {
    pub top_k: usize,
    /// Only the n largest history terms count per candidate (item-based scorers).
    pub history_cap: Option<usize>,
    /// Flatten ratings to 1 before computing similarities and scores.
    pub binarize: bool,
}

impl Default for CfParams {
    fn default() -> Self {
        CfParams { top_k: DEFAULT_TOP_K, history_cap: None, binarize: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwingScorerParams {
    pub top_k: usize,
    pub alpha: f64,
    pub max_users_per_item: usize,
    pub history_cap: Option<usize>,
}

impl Default for SwingScorerParams {
    fn default() -> Self {
        let s = SwingParams::default();
        SwingScorerParams { top_k: DEFAULT_TOP_K, alpha: s.alpha, max_users_per_item: s.max_users_per_item, history_cap: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoParams {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Word2VecParams {
    pub shuffles: usize,
    pub skipgram: SkipGramParams,
}

impl Default for Word2VecParams {
    fn default() -> Self {
        Word2VecParams { shuffles: 5, skipgram: SkipGramParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Node2VecParams {
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub skipgram: SkipGramParams,
}

impl Default for Node2VecParams {
    fn default() -> Self {
        let w = WalkParams::dfs(0);
        Node2VecParams { walk_length: w.walk_length, walks_per_node: w.walks_per_node, skipgram: SkipGramParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightGcnScorerParams {
    pub lightgcn: LightGcnParams,
    pub metric: Metric,
}

impl Default for LightGcnScorerParams {
    fn default() -> Self {
        LightGcnScorerParams { lightgcn: LightGcnParams::default(), metric: Metric::Dot }
    }
}

/// One scorer with its parameters. Seeds inside trainer parameters are
/// combined with the stage seed and the feature name at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scorer", rename_all = "snake_case")]
pub enum ScorerParams {
    ItemCf(CfParams),
    UserCf(CfParams),
    Swing(SwingScorerParams),
    Llr(CfParams),
    Bigraph(NoParams),
    Word2vec(Word2VecParams),
    Node2vecDfs(Node2VecParams),
    Node2vecBfs(Node2VecParams),
    Lightgcn(LightGcnScorerParams),
}

impl ScorerParams {
    pub fn scorer_name(&self) -> &'static str {
        match self {
            ScorerParams::ItemCf(_) => "item_cf",
            ScorerParams::UserCf(_) => "user_cf",
            ScorerParams::Swing(_) => "swing",
            ScorerParams::Llr(_) => "llr",
            ScorerParams::Bigraph(_) => "bigraph",
            ScorerParams::Word2vec(_) => "word2vec",
            ScorerParams::Node2vecDfs(_) => "node2vec_dfs",
            ScorerParams::Node2vecBfs(_) => "node2vec_bfs",
            ScorerParams::Lightgcn(_) => "lightgcn",
        }
    }

    /// First 8 hex digits of sha256 over the canonical JSON form.
    pub fn params_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        hex::encode(Sha256::digest(json.as_bytes()))[..8].to_owned()
    }

    /// The five memory-based scorers with default parameters.
    pub fn memory_defaults() -> Vec<ScorerParams> {
        vec![
            ScorerParams::ItemCf(CfParams::default()),
            ScorerParams::UserCf(CfParams::default()),
            ScorerParams::Swing(SwingScorerParams::default()),
            ScorerParams::Llr(CfParams { binarize: true, ..Default::default() }),
            ScorerParams::Bigraph(NoParams {}),
        ]
    }
}

/// A plan line as written in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    #[serde(default)]
    pub combinations: CombinationSelector,
    pub params: ScorerParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerSpec {
    pub name: String,
    pub params: ScorerParams,
    pub combination: CombinationSpec,
}

impl ScorerSpec {
    pub fn new(params: ScorerParams, combination: CombinationSpec) -> Self {
        let name = format!("{}__{}__{}", params.scorer_name(), params.params_hash(), combination.id);
        ScorerSpec { name, params, combination }
    }

    pub fn missing_name(&self) -> String {
        format!("{}__missing", self.name)
    }
}

/// Expands plan lines into specs for one target; duplicate names collapse.
pub fn expand_plan(entries: &[PlanEntry], target: &MarketId, markets: &[MarketId], targets: &[MarketId]) -> Result<Vec<ScorerSpec>> {
    let mut out: Vec<ScorerSpec> = Vec::new();
    for e in entries {
        for c in e.combinations.resolve(target, markets, targets)? {
            let s = ScorerSpec::new(e.params.clone(), c);
            if !out.iter().any(|o| o.name == s.name) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Fits the scorer on `m`. `seed_v` feeds every stochastic trainer.
pub fn build_scorer(params: &ScorerParams, m: &SparseInteractionMatrix, seed_v: u64) -> Result<Box<dyn CandidateScorer>> {
    let nu = m.n_users();
    let maybe_bin = |b: bool| if b { m.binarized() } else { m.clone() };
    Ok(match params {
        ScorerParams::ItemCf(p) => {
            let mm = maybe_bin(p.binarize);
            Box::new(ItemBasedScorer { table: item_cosine_similarity(&mm, p.top_k), matrix: mm, history_cap: p.history_cap })
        }
        ScorerParams::UserCf(p) => {
            let mm = maybe_bin(p.binarize);
            Box::new(UserBasedScorer { table: user_cosine_similarity(&mm, p.top_k), matrix: mm })
        }
        ScorerParams::Swing(p) => {
            let mm = m.binarized();
            let sp = SwingParams { alpha: p.alpha, max_users_per_item: p.max_users_per_item };
            Box::new(ItemBasedScorer { table: swing_similarity(&mm, sp, p.top_k)?, matrix: mm, history_cap: p.history_cap })
        }
        ScorerParams::Llr(p) => {
            let table = llr_item_similarity(&m.binarized(), p.top_k);
            Box::new(ItemBasedScorer { table, matrix: maybe_bin(p.binarize), history_cap: p.history_cap })
        }
        ScorerParams::Bigraph(_) => Box::new(BiGraphScorer { matrix: m.binarized() }),
        ScorerParams::Word2vec(p) => {
            let corpus = user_history_sequences(m, p.shuffles, seed::mix(seed_v, 1, 0))?;
            let sg = SkipGramParams { seed: seed::mix(seed_v, 2, p.skipgram.seed), ..p.skipgram };
            let model = train_skipgram(&corpus, m.n_items(), &sg)?;
            Box::new(EmbeddingScorer { table: users_from_item_means(m, &model.embeddings), n_users: nu, metric: Metric::Cosine })
        }
        ScorerParams::Node2vecDfs(p) | ScorerParams::Node2vecBfs(p) => {
            let base = if matches!(params, ScorerParams::Node2vecDfs(_)) { WalkParams::dfs(0) } else { WalkParams::bfs(0) };
            let wp = WalkParams {
                walk_length: p.walk_length,
                walks_per_node: p.walks_per_node,
                seed: seed::mix(seed_v, 1, 0),
                ..base
            };
            let g = NodeGraph::bipartite(m);
            let walks = generate_walks(&g, &wp)?;
            let sg = SkipGramParams { seed: seed::mix(seed_v, 2, p.skipgram.seed), ..p.skipgram };
            let model = train_skipgram(&walks, g.n_nodes(), &sg)?;
            Box::new(EmbeddingScorer { table: model.embeddings, n_users: nu, metric: Metric::Cosine })
        }
        ScorerParams::Lightgcn(p) => {
            let lp = LightGcnParams { seed: seed::mix(seed_v, 1, p.lightgcn.seed), ..p.lightgcn };
            let model = train_lightgcn(m, &lp)?;
            Box::new(EmbeddingScorer { table: model.embeddings, n_users: nu, metric: p.metric })
        }
    })
}

/// Scores plus missing flags for every (user, candidate) pair, in run order.
pub fn score_run(scorer: &dyn CandidateScorer, run: &RunFile<u32>) -> (Vec<f64>, Vec<f64>) {
    let per_user: Vec<(Vec<f64>, Vec<f64>)> = run
        .entries()
        .par_iter()
        .map(|e| {
            let s = scorer.score(e.user, &e.candidates);
            let flags = s.missing.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            let values = s.values().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
            (values, flags)
        })
        .collect();
    let mut values = Vec::with_capacity(run.n_pairs());
    let mut flags = Vec::with_capacity(run.n_pairs());
    for (v, f) in per_user {
        values.extend(v);
        flags.extend(f);
    }
    (values, flags)
}

pub fn keys_digest(keys: &[(u32, u32)]) -> String {
    let mut h = Sha256::new();
    for (u, i) in keys {
        h.update(u.to_le_bytes());
        h.update(i.to_le_bytes());
    }
    hex::encode(h.finalize())[..16].to_owned()
}

/// Where plan columns live and what they must match to be reused.
pub struct PlanContext<'a> {
    pub dataset: &'a Dataset,
    pub dataset_digest: String,
    pub target: MarketId,
    pub cache_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub computed: Vec<String>,
    pub cached: Vec<String>,
    pub failed: Vec<(String, String)>,
}

fn cache_path(dir: &Path, feature: &str, run: &str) -> PathBuf {
    dir.join(format!("{feature}.{run}.tsv"))
}

fn cache_header(n: usize, keys: &str, data: &str) -> String {
    format!("# rows={n} keys={keys} data={data}")
}

fn read_cache(path: &Path, header: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != header {
        return None;
    }
    let (mut v, mut f) = (Vec::new(), Vec::new());
    for line in lines {
        let (a, b) = line.split_once('\t')?;
        v.push(a.parse().ok()?);
        f.push(b.parse().ok()?);
    }
    Some((v, f))
}

fn write_cache(path: &Path, header: &str, values: &[f64], flags: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 12);
    out.push_str(header);
    out.push('\n');
    for (v, f) in values.iter().zip(flags) {
        let _ = writeln!(out, "{v}\t{f}");
    }
    crate::market_data::write_atomic_pub(path, out.as_bytes())
}

/// Runs every spec over the given runs and returns one table per run (keys
/// in run order, no labels) with a value and a `__missing` column per spec.
/// Columns are cached per (feature, run); a failing spec is recorded in the
/// outcome and left out of the tables.
pub fn run_plan(specs: &[ScorerSpec], ctx: &PlanContext, runs: &[(&str, &RunFile<u32>)]) -> Result<(Vec<FeatureTable>, PlanOutcome)> {
    for s in specs {
        if s.combination.target != ctx.target || !s.combination.exclude_valid_of_target {
            return Err(Error::invalid(format!(
                "{}: combinations for target {} must exclude its valid positives",
                s.name, ctx.target
            )));
        }
    }
    fs::create_dir_all(&ctx.cache_dir).map_err(|e| Error::io(&ctx.cache_dir, e))?;
    let keys: Vec<Vec<(u32, u32)>> = runs.iter().map(|(_, r)| r.pairs()).collect();
    let headers: Vec<String> = keys
        .iter()
        .map(|k| cache_header(k.len(), &keys_digest(k), &ctx.dataset_digest))
        .collect();
    type Col = std::result::Result<(Vec<(Vec<f64>, Vec<f64>)>, bool), String>;
    let compute = |s: &ScorerSpec| -> Col {
        let cached: Option<Vec<_>> = runs
            .iter()
            .zip(&headers)
            .map(|((label, _), h)| read_cache(&cache_path(&ctx.cache_dir, &s.name, label), h))
            .collect();
        if let Some(c) = cached {
            return Ok((c, true));
        }
        let m = ctx.dataset.matrix(&s.combination).map_err(|e| e.to_string())?;
        let scorer = build_scorer(&s.params, &m, seed::derive(ctx.seed, &s.name)).map_err(|e| e.to_string())?;
        let mut cols = Vec::with_capacity(runs.len());
        for ((label, run), h) in runs.iter().zip(&headers) {
            let (v, f) = score_run(scorer.as_ref(), run);
            write_cache(&cache_path(&ctx.cache_dir, &s.name, label), h, &v, &f).map_err(|e| e.to_string())?;
            cols.push((v, f));
        }
        log::info!("prerank {}: computed {}", ctx.target, s.name);
        Ok((cols, false))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Col> = pool.install(|| specs.par_iter().map(compute).collect());

    let mut tables = keys
        .into_iter()
        .map(|k| FeatureTable::new(k, None))
        .collect::<Result<Vec<_>>>()?;
    let mut outcome = PlanOutcome::default();
    for (s, r) in specs.iter().zip(results) {
        match r {
            Ok((cols, was_cached)) => {
                if was_cached {
                    outcome.cached.push(s.name.clone());
                } else {
                    outcome.computed.push(s.name.clone());
                }
                let info = ColumnInfo {
                    name: s.name.clone(),
                    source: ColumnSource::Scorer {
                        scorer: s.params.scorer_name().into(),
                        params_hash: s.params.params_hash(),
                        combination: s.combination.clone(),
                    },
                };
                let miss = ColumnInfo { name: s.missing_name(), source: ColumnSource::MissingIndicator { of: s.name.clone() } };
                for (t, (v, f)) in tables.iter_mut().zip(cols) {
                    t.add_column(info.clone(), v)?;
                    t.add_column(miss.clone(), f)?;
                }
            }
            Err(e) => {
                log::error!("prerank {}: {} failed: {e}", ctx.target, s.name);
                outcome.failed.push((s.name.clone(), e));
            }
        }
    }
    Ok((tables, outcome))
}
