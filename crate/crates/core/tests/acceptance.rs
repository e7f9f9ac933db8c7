//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary
//! (`harness = false`) so the end-to-end runs share one process.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::Check;
use xmrec::gbdt_ranker::BaggedModel;
use xmrec::market_data::MarketId;
use xmrec::pipeline::{cmd_synth, run_pipeline, PipelineConfig, PipelineReport, Workspace};

const TARGETS: [&str; 2] = ["t1", "t2"];
/// Target whose synthetic users are sparse enough for other markets to help.
const UPLIFT_TARGET: &str = "t1";

fn base_toml(workspace: &Path, data: &Path, targets: &[&str]) -> String {
    let targets: Vec<String> = targets.iter().map(|t| format!("{t:?}")).collect();
    format!(
        r#"seed = 11
workspace = {workspace:?}
data_dir = {data:?}
markets = ["s1", "s2", "s3", "t1", "t2"]
targets = [{targets}]

[selection]
null_shuffles = 10
n_rounds = 40

[ranker]
folds = 5
params = {{ num_leaves = 7, min_data_in_leaf = 50, n_rounds = 200, learning_rate = 0.03, feature_fraction = 0.5 }}
"#,
        targets = targets.join(", ")
    )
}

fn arm_toml(combination: &str) -> String {
    let entries: Vec<String> = ["item_cf", "user_cf", "swing", "llr", "bigraph"]
        .iter()
        .map(|s| format!("  {{ combinations = {combination:?}, params = {{ scorer = {s:?} }} }},"))
        .collect();
    format!("\n[prerank]\nstatistics = false\nexternal_embeddings = false\nplan = [\n{}\n]\n", entries.join("\n"))
}

struct Run {
    cfg: PipelineConfig,
    report: PipelineReport,
    elapsed: Duration,
}

fn pipeline(toml: &str) -> Result<Run, String> {
    let cfg = PipelineConfig::from_toml(toml).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    Ok(Run { cfg, report, elapsed: start.elapsed() })
}

fn id(t: &str) -> MarketId {
    MarketId::new(t).unwrap()
}

struct EndToEnd {
    full: Run,
    again: Run,
    all: Run,
    target_only: Run,
}

fn end_to_end(dir: &Path) -> Result<EndToEnd, String> {
    let data = dir.join("data");
    let synth_cfg = PipelineConfig::from_toml(&base_toml(&dir.join("unused"), &data, &TARGETS)).map_err(|e| e.to_string())?;
    cmd_synth(&synth_cfg).map_err(|e| e.to_string())?;
    let full = pipeline(&base_toml(&dir.join("full"), &data, &TARGETS))?;
    let again = pipeline(&base_toml(&dir.join("again"), &data, &TARGETS))?;
    let all = pipeline(&(base_toml(&dir.join("all"), &data, &[UPLIFT_TARGET]) + &arm_toml("all")))?;
    let target_only = pipeline(&(base_toml(&dir.join("target"), &data, &[UPLIFT_TARGET]) + &arm_toml("target")))?;
    Ok(EndToEnd { full, again, all, target_only })
}

fn fold_models(run: &Run, t: &str) -> Result<BaggedModel, String> {
    let path = Workspace::new(&run.cfg.workspace).train(&id(t)).join("model.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    BaggedModel::from_json(&text).map_err(|e| e.to_string())
}

fn timed(check: impl FnOnce() -> Check, limit: Duration) -> Check {
    let start = Instant::now();
    let detail = check()?;
    let took = start.elapsed();
    if took > limit {
        return Err(format!("{detail}; took {took:.1?}, limit {limit:?}"));
    }
    Ok(format!("{detail}; {took:.2?}"))
}

fn check_gbdt_with_pipeline(e2e: &Result<EndToEnd, String>) -> Check {
    let detail = common::check_gbdt()?;
    let e2e = e2e.as_ref().map_err(|e| format!("pipeline fixture failed: {e}"))?;
    let mut n = 0;
    for t in TARGETS {
        for m in fold_models(&e2e.full, t)?.fold_models {
            if !common::logloss_nonincreasing(&m) {
                return Err(format!("logloss increased in a {t} fold model"));
            }
            n += 1;
        }
    }
    Ok(format!("{detail}; {n} pipeline fold models monotone"))
}

fn check_uplift(e2e: &Result<EndToEnd, String>) -> Check {
    let e2e = e2e.as_ref().map_err(|e| e.clone())?;
    let t = id(UPLIFT_TARGET);
    let all = e2e.all.report.targets[&t].oof_ndcg;
    let tgt = e2e.target_only.report.targets[&t].oof_ndcg;
    let mut notes = vec![format!("{UPLIFT_TARGET} all-markets {all:.4} vs target-only {tgt:.4}")];
    let mut fail = all - tgt < 0.02;
    for name in TARGETS {
        let m = &e2e.full.report.targets[&id(name)];
        let (best, score) = m.best_scorer().ok_or("no scorer columns")?;
        notes.push(format!("{name} pipeline {:.4} vs best scorer {best} {score:.4}", m.oof_ndcg));
        fail |= m.oof_ndcg - score < 0.01;
    }
    let secs = e2e.full.elapsed;
    notes.push(format!("end-to-end {secs:.1?}"));
    fail |= secs > Duration::from_secs(300);
    let text = notes.join("; ");
    if fail {
        Err(text)
    } else {
        Ok(text)
    }
}

fn check_determinism(e2e: &Result<EndToEnd, String>) -> Check {
    let e2e = e2e.as_ref().map_err(|e| e.clone())?;
    let a = Workspace::new(&e2e.full.cfg.workspace);
    let b = Workspace::new(&e2e.again.cfg.workspace);
    let mut compared = 0;
    for t in TARGETS {
        for file in ["model.json", "test_run.tsv", "oof_run.tsv"] {
            let pa = a.train(&id(t)).join(file);
            let pb = b.train(&id(t)).join(file);
            let (x, y) = (std::fs::read(&pa).map_err(|e| e.to_string())?, std::fs::read(&pb).map_err(|e| e.to_string())?);
            if x != y {
                return Err(format!("{t}/{file} differs between runs"));
            }
            compared += x.len();
        }
    }
    Ok(format!("run files and models identical across two runs ({compared} bytes)"))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("tempdir");
    let e2e = end_to_end(dir.path());
    let results: Vec<(u32, Check)> = vec![
        (1, timed(common::check_memory_oracles, Duration::from_secs(10))),
        (2, common::check_ndcg()),
        (3, common::check_market_weights()),
        (4, common::check_lightgcn_and_gradients()),
        (5, check_gbdt_with_pipeline(&e2e)),
        (6, common::check_selection()),
        (7, check_uplift(&e2e)),
        (8, check_determinism(&e2e)),
    ];
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(d) => println!("criterion {n}: PASS {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
