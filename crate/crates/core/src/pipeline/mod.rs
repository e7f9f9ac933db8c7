//! Pipeline stages over a workspace directory: ingest, pre-rank, select,
//! train and report. Each stage reads the previous stage's files, so any
//! stage can be rerun on its own.

mod config;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{EvaluationConfig, PipelineConfig, PrerankConfig, RankerConfig};
pub use synth::{SynthConfig, SynthMarket, SynthTruth};

use crate::error::{Error, Result};
use crate::evaluation::{
    default_market_weights, emit_run_file, ndcg_at_k, read_qrels, read_ranked_run, MetricReport, Qrels, RankedRun,
    DEFAULT_K,
};
use crate::feature_selection::{select_features, SelectionReport};
use crate::gbdt_ranker::{grid_search, kfold_bagging, oof_ndcg, BaggedModel, GbdtParams, GridRow};
use crate::graph_embeddings::{train_skipgram, user_history_sequences, SkipGramParams};
use crate::market_data::{
    load_market, write_atomic_pub, CombinationSpec, Dataset, DatasetSummary, MarketId, RunKind, Split,
};
use crate::prerank_features::{
    expand_plan, external_embedding_features, feature_correlation, global_statistic_features, load_item_vectors,
    run_plan, ColumnSource, FeatureTable, PlanContext, PlanOutcome,
};
use crate::seed;

fn stage_err(stage: &str, message: impl Into<String>) -> Error {
    Error::Stage { stage: stage.into(), message: message.into() }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic_pub(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Directory layout of a workspace.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn snapshot(&self) -> PathBuf {
        self.root.join("snapshot")
    }

    pub fn prerank(&self, target: &MarketId) -> PathBuf {
        self.root.join("prerank").join(target.as_str())
    }

    pub fn select(&self, target: &MarketId) -> PathBuf {
        self.root.join("select").join(target.as_str())
    }

    pub fn train(&self, target: &MarketId) -> PathBuf {
        self.root.join("train").join(target.as_str())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn load_dataset(&self, stage: &str) -> Result<Dataset> {
        let dir = self.snapshot();
        if !dir.join("snapshot.json").exists() {
            return Err(stage_err(stage, format!("no snapshot in {}; run ingest first", self.root.display())));
        }
        Dataset::load(&dir)
    }
}

/// Held while a stage runs; a second holder fails instead of racing.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        create_dir(root)?;
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(stage_err(
                "lock",
                format!("{} exists; another run is using this workspace (delete it if stale)", path.display()),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn stage_seed(cfg: &PipelineConfig, stage: &str, target: &MarketId) -> u64 {
    seed::derive(cfg.seed, &format!("{stage}/{target}"))
}

fn target_id(cfg: &PipelineConfig, target: &str) -> Result<MarketId> {
    if !cfg.targets.iter().any(|t| t == target) {
        return Err(Error::Config(format!("{target} is not a configured target")));
    }
    MarketId::new(target).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub digest: String,
    pub malformed_rows: usize,
    pub summary: DatasetSummary,
}

/// Loads every configured market from `data_dir/<market>/` and writes the
/// encoded snapshot to the workspace.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestReport> {
    let ws = Workspace::new(&cfg.workspace);
    let _lock = WorkspaceLock::acquire(&ws.root)?;
    let mut files = Vec::new();
    let mut malformed_rows = 0;
    for m in cfg.market_ids()? {
        let dir = cfg.data_dir.join(m.as_str());
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir));
        }
        let f = load_market(&dir, &m)?;
        for e in &f.row_errors {
            log::warn!("{m}: {}:{}: {}", e.file.display(), e.line, e.message);
        }
        malformed_rows += f.row_errors.len();
        files.push(f);
    }
    let ds = Dataset::from_markets(files, cfg.force_rating)?;
    let digest = ds.save(&ws.snapshot())?;
    log::info!("ingest: {} users, {} items, snapshot {digest}", ds.n_users(), ds.n_items());
    Ok(IngestReport { digest, malformed_rows, summary: ds.summary() })
}

/// Generates the synthetic fixture into `data_dir`.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthTruth> {
    let sc = cfg.synth.clone().unwrap_or_default();
    synth::generate(&sc, &cfg.data_dir)
}

fn valid_labels(ds: &Dataset, target: &MarketId, keys: &[(u32, u32)]) -> Vec<f64> {
    let pos: BTreeSet<(u32, u32)> = ds.qrel_pairs(target, Split::ValidQrel).into_iter().collect();
    keys.iter().map(|k| if pos.contains(k) { 1.0 } else { 0.0 }).collect()
}

fn external_vectors(cfg: &PipelineConfig, ds: &Dataset, target: &MarketId, dir: &Path, m: &crate::market_data::SparseInteractionMatrix) -> Result<crate::graph_embeddings::EmbeddingTable> {
    if let Some(path) = &cfg.prerank.external_path {
        return load_item_vectors(path, &ds.items);
    }
    let p = &cfg.prerank.external_word2vec;
    let s = stage_seed(cfg, "external", target);
    let corpus = user_history_sequences(m, p.shuffles, seed::mix(s, 1, 0))?;
    let sg = SkipGramParams { seed: seed::mix(s, 2, p.skipgram.seed), ..p.skipgram };
    let model = train_skipgram(&corpus, m.n_items(), &sg)?;
    let path = dir.join("item_vectors.tsv");
    model.embeddings.write_tsv(&path, |i| ds.items.decode(i).unwrap_or_default().to_owned())?;
    load_item_vectors(&path, &ds.items)
}

/// Builds `valid.tsv` (labeled) and `test.tsv` for one target. Scorer
/// columns are cached under `cache/`; a failed scorer is reported after the
/// remaining outputs are written.
pub fn cmd_prerank(cfg: &PipelineConfig, target: &str) -> Result<PlanOutcome> {
    let ws = Workspace::new(&cfg.workspace);
    let _lock = WorkspaceLock::acquire(&ws.root)?;
    let target = target_id(cfg, target)?;
    let ds = ws.load_dataset("prerank")?;
    let dir = ws.prerank(&target);
    create_dir(&dir)?;
    let markets = cfg.market_ids()?;
    let targets = cfg.target_ids()?;
    let specs = expand_plan(&cfg.prerank.plan, &target, &markets, &targets)?;
    let valid_run = ds.run(&target, RunKind::Valid)?;
    let test_run = ds.run(&target, RunKind::Test)?;
    let ctx = PlanContext {
        dataset: &ds,
        dataset_digest: ds.digest(),
        target: target.clone(),
        cache_dir: dir.join("cache"),
        seed: stage_seed(cfg, "prerank", &target),
        workers: cfg.workers(),
    };
    let (tables, outcome) = run_plan(&specs, &ctx, &[("valid", valid_run), ("test", test_run)])?;
    let [mut valid, mut test]: [FeatureTable; 2] =
        tables.try_into().map_err(|_| stage_err("prerank", "plan returned the wrong number of tables"))?;

    if cfg.prerank.statistics {
        for t in [&mut valid, &mut test] {
            for (info, values) in global_statistic_features(&ds, &target, t.keys())? {
                t.add_column(info, values)?;
            }
        }
    }
    if cfg.prerank.external_embeddings {
        let spec = CombinationSpec::new(target.clone(), markets.clone(), true)?;
        let m = ds.matrix(&spec)?;
        let vectors = external_vectors(cfg, &ds, &target, &dir, &m)?;
        for t in [&mut valid, &mut test] {
            for (info, values) in external_embedding_features(&vectors, t.keys(), &m, "ext_w2v") {
                t.add_column(info, values)?;
            }
        }
    }
    let labels = valid_labels(&ds, &target, valid.keys());
    valid.set_labels(labels)?;

    valid.write_tsv(&dir.join("valid.tsv"))?;
    test.write_tsv(&dir.join("test.tsv"))?;
    let scorer_cols: Vec<&str> = valid
        .catalog()
        .iter()
        .filter(|c| matches!(c.source, ColumnSource::Scorer { .. }))
        .map(|c| c.name.as_str())
        .collect();
    if !scorer_cols.is_empty() {
        let corr = feature_correlation(&valid, &scorer_cols)?;
        write_atomic_pub(&dir.join("correlation.tsv"), corr.to_tsv().as_bytes())?;
    }
    write_json(&dir.join("outcome.json"), &outcome)?;
    if !outcome.failed.is_empty() {
        let names: Vec<&str> = outcome.failed.iter().map(|f| f.0.as_str()).collect();
        return Err(stage_err("prerank", format!("{} scorer(s) failed: {}", names.len(), names.join(", "))));
    }
    Ok(outcome)
}

fn read_table(path: &Path, stage: &str, hint: &str) -> Result<FeatureTable> {
    if !path.exists() {
        return Err(stage_err(stage, format!("{} missing; run {hint} first", path.display())));
    }
    FeatureTable::read_tsv(path)
}

/// Screens the pre-rank features of one target and writes the kept list.
pub fn cmd_select(cfg: &PipelineConfig, target: &str) -> Result<SelectionReport> {
    let ws = Workspace::new(&cfg.workspace);
    let _lock = WorkspaceLock::acquire(&ws.root)?;
    let target = target_id(cfg, target)?;
    let pre = ws.prerank(&target);
    let valid = read_table(&pre.join("valid.tsv"), "select", "prerank")?;
    let test = read_table(&pre.join("test.tsv"), "select", "prerank")?;
    let params = GbdtParams { seed: stage_seed(cfg, "select", &target), ..cfg.ranker.params };
    let report = select_features(&valid, &test, &cfg.selection, &params, stage_seed(cfg, "select/null", &target))?;
    let dir = ws.select(&target);
    create_dir(&dir)?;
    write_atomic_pub(&dir.join("report.tsv"), report.to_tsv().as_bytes())?;
    write_json(&dir.join("report.json"), &report)?;
    let mut kept = report.kept().join("\n");
    kept.push('\n');
    write_atomic_pub(&dir.join("kept.txt"), kept.as_bytes())?;
    log::info!("select {target}: kept {} of {}", report.kept().len(), report.records.len());
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub target: MarketId,
    pub n_features: usize,
    pub folds: usize,
    pub params: GbdtParams,
    pub oof_ndcg: f64,
    /// NDCG@10 of each raw pre-rank scorer column on the labeled candidates.
    pub scorer_ndcg: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridRow>>,
}

impl TrainMetrics {
    pub fn best_scorer(&self) -> Option<(&str, f64)> {
        self.scorer_ndcg
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .fold(None, |best, x| match best {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            })
    }
}

fn ranked_raw(ds_users: &[String], ds_items: &[String], table: &FeatureTable, scores: &[f64]) -> Result<RankedRun<String>> {
    let mut per_user: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for (rows_user, rows) in table.user_rows() {
        let items = rows.iter().map(|&r| (ds_items[table.keys()[r].1 as usize].clone(), scores[r])).collect();
        per_user.push((ds_users[rows_user as usize].clone(), items));
    }
    RankedRun::from_scores(per_user)
}

/// Bagged training on the target's labeled valid candidates, then
/// prediction of the test candidates.
pub fn cmd_train(cfg: &PipelineConfig, target: &str) -> Result<TrainMetrics> {
    let ws = Workspace::new(&cfg.workspace);
    let _lock = WorkspaceLock::acquire(&ws.root)?;
    let target = target_id(cfg, target)?;
    let ds = ws.load_dataset("train")?;
    let pre = ws.prerank(&target);
    let valid = read_table(&pre.join("valid.tsv"), "train", "prerank")?;
    let test = read_table(&pre.join("test.tsv"), "train", "prerank")?;
    let kept_path = ws.select(&target).join("kept.txt");
    if !kept_path.exists() {
        return Err(stage_err("train", format!("{} missing; run select first", kept_path.display())));
    }
    let kept_text = fs::read_to_string(&kept_path).map_err(|e| Error::io(&kept_path, e))?;
    let kept: Vec<&str> = kept_text.lines().filter(|l| !l.is_empty()).collect();
    if kept.is_empty() {
        return Err(stage_err("train", "feature selection kept no features"));
    }
    let table = valid.select(&kept)?;
    let test = test.select(&kept)?;

    let mut params = GbdtParams { seed: stage_seed(cfg, "train", &target), ..cfg.ranker.params };
    let folds = cfg.ranker.folds;
    let dir = ws.train(&target);
    create_dir(&dir)?;
    let mut grid = None;
    if cfg.ranker.grid_search {
        let res = grid_search(&table, &params, &cfg.ranker.grid, folds)?;
        let mut tsv = String::from("num_leaves\tlearning_rate\toof_ndcg\n");
        for r in &res.rows {
            tsv.push_str(&format!("{}\t{}\t{:.6}\n", r.num_leaves, r.learning_rate, r.oof_ndcg));
        }
        write_atomic_pub(&dir.join("grid.tsv"), tsv.as_bytes())?;
        params = res.best;
        grid = Some(res.rows);
    }
    let model = kfold_bagging(&table, &params, folds)?;
    let oof = model.oof.clone();
    let oof_score = oof_ndcg(&table, &oof)?;

    let mut scorer_ndcg = BTreeMap::new();
    for c in valid.catalog() {
        if matches!(c.source, ColumnSource::Scorer { .. }) {
            let values = valid.column(&c.name).expect("catalog column");
            scorer_ndcg.insert(c.name.clone(), oof_ndcg(&valid, values)?);
        }
    }

    let users = ds.users.raw_ids();
    let items = ds.items.raw_ids();
    write_atomic_pub(&dir.join("model.json"), model.to_json()?.as_bytes())?;
    emit_run_file(&ranked_raw(users, items, &table, &oof)?, &dir.join("oof_run.tsv"))?;
    let preds = model.predict(&test)?;
    emit_run_file(&ranked_raw(users, items, &test, &preds)?, &dir.join("test_run.tsv"))?;

    let metrics = TrainMetrics {
        target: target.clone(),
        n_features: table.n_columns(),
        folds,
        params,
        oof_ndcg: oof_score,
        scorer_ndcg,
        grid,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    log::info!("train {target}: oof ndcg@10 {oof_score:.4} with {} features", metrics.n_features);
    Ok(metrics)
}

/// Loads a bagged model written by `cmd_train`.
pub fn load_model(cfg: &PipelineConfig, target: &str) -> Result<BaggedModel> {
    let target = target_id(cfg, target)?;
    let path = Workspace::new(&cfg.workspace).train(&target).join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    BaggedModel::from_json(&text)
}

fn resolve_weights(cfg: &PipelineConfig, markets: &[MarketId]) -> Result<BTreeMap<MarketId, f64>> {
    if let Some(w) = &cfg.evaluation.weights {
        return w
            .iter()
            .map(|(k, v)| Ok((MarketId::new(k).map_err(|e| Error::Config(e.to_string()))?, *v)))
            .collect();
    }
    if let Some(w) = default_market_weights(markets) {
        return Ok(w);
    }
    let n = markets.len().max(1) as f64;
    Ok(markets.iter().map(|m| (m.clone(), 1.0 / n)).collect())
}

/// One input of `cmd_evaluate`.
#[derive(Clone, Debug)]
pub struct EvalInput {
    pub market: MarketId,
    pub run: PathBuf,
    pub qrels: PathBuf,
}

/// NDCG@10 per market plus the weighted combination.
pub fn cmd_evaluate(cfg: &PipelineConfig, inputs: &[EvalInput]) -> Result<MetricReport> {
    if inputs.is_empty() {
        return Err(Error::Config("evaluate needs at least one run/qrels pair".into()));
    }
    let mut per_market = BTreeMap::new();
    for i in inputs {
        let run = read_ranked_run(&i.run)?;
        let qrels = read_qrels(&i.qrels)?;
        if per_market.insert(i.market.clone(), ndcg_at_k(&run, &qrels, DEFAULT_K)?).is_some() {
            return Err(Error::Config(format!("market {} given twice", i.market)));
        }
    }
    let markets: Vec<MarketId> = per_market.keys().cloned().collect();
    MetricReport::build(per_market, resolve_weights(cfg, &markets)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub targets: BTreeMap<MarketId, TrainMetrics>,
    /// Test-set NDCG@10, when the data came with test qrels.
    pub test: Option<MetricReport>,
}

/// Collects the trained targets' metrics and scores their test runs
/// against test qrels where the snapshot has them.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let ws = Workspace::new(&cfg.workspace);
    let _lock = WorkspaceLock::acquire(&ws.root)?;
    let ds = ws.load_dataset("report")?;
    let mut targets = BTreeMap::new();
    let mut per_market = BTreeMap::new();
    for t in cfg.target_ids()? {
        let dir = ws.train(&t);
        let mpath = dir.join("metrics.json");
        if !mpath.exists() {
            return Err(stage_err("report", format!("{} missing; run train first", mpath.display())));
        }
        targets.insert(t.clone(), read_json::<TrainMetrics>(&mpath)?);
        let pairs = ds.qrel_pairs(&t, Split::TestQrel);
        if pairs.is_empty() {
            continue;
        }
        let qrels = Qrels::from_pairs(pairs.into_iter().map(|(u, i)| {
            (ds.users.decode(u).unwrap_or_default().to_owned(), ds.items.decode(i).unwrap_or_default().to_owned())
        }));
        let run = read_ranked_run(&dir.join("test_run.tsv"))?;
        per_market.insert(t, ndcg_at_k(&run, &qrels, DEFAULT_K)?);
    }
    let test = if per_market.is_empty() {
        None
    } else {
        let markets: Vec<MarketId> = per_market.keys().cloned().collect();
        Some(MetricReport::build(per_market, resolve_weights(cfg, &markets)?)?)
    };
    let report = PipelineReport { targets, test };
    write_json(&ws.report(), &report)?;
    Ok(report)
}

/// Every stage in order, for all targets.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cmd_ingest(cfg)?;
    for t in &cfg.targets {
        cmd_prerank(cfg, t)?;
        cmd_select(cfg, t)?;
        cmd_train(cfg, t)?;
    }
    cmd_report(cfg)
}
