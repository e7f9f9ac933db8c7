use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    build_matrix, dedupe_and_mark_5core, summarize, CombinationSpec, DatasetSummary, IdEncoder,
    Interaction, MarketFiles, MarketId, RunEntry, RunFile, SparseInteractionMatrix, Split,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Valid,
    Test,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Valid => "valid",
            RunKind::Test => "test",
        }
    }
}

/// All markets encoded into one shared user and item id space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub markets: Vec<MarketId>,
    pub users: IdEncoder,
    pub items: IdEncoder,
    pub interactions: Vec<Interaction>,
    pub runs: BTreeMap<(MarketId, RunKind), RunFile<u32>>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    version: u32,
    markets: Vec<MarketId>,
    digest: String,
}

const SNAPSHOT_VERSION: u32 = 1;

impl Dataset {
    /// Encode raw market files (ids assigned in market order, then file
    /// order), drop duplicates and force `train_5core` ratings to `force_rating`.
    pub fn from_markets(files: Vec<MarketFiles>, force_rating: f64) -> Result<Self> {
        let mut users = IdEncoder::new();
        let mut items = IdEncoder::new();
        let mut markets = Vec::with_capacity(files.len());
        let mut interactions = Vec::new();
        let mut runs = BTreeMap::new();
        for f in files {
            if markets.contains(&f.market) {
                return Err(Error::invalid(format!("market {} loaded twice", f.market)));
            }
            markets.push(f.market.clone());
            for r in f.interactions {
                interactions.push(Interaction {
                    user: users.intern(&r.user),
                    item: items.intern(&r.item),
                    rating: r.rating,
                    market: r.market,
                    split: r.split,
                });
            }
            for (kind, run) in [(RunKind::Valid, f.valid_run), (RunKind::Test, f.test_run)] {
                let Some(run) = run else { continue };
                let entries = run
                    .entries()
                    .iter()
                    .map(|e| RunEntry {
                        user: users.intern(&e.user),
                        candidates: e.candidates.iter().map(|c| items.intern(c)).collect(),
                    })
                    .collect();
                runs.insert((f.market.clone(), kind), RunFile::new(entries)?);
            }
        }
        Ok(Dataset {
            markets,
            users,
            items,
            interactions: dedupe_and_mark_5core(interactions, force_rating),
            runs,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn market(&self, name: &str) -> Result<MarketId> {
        self.markets
            .iter()
            .find(|m| m.as_str() == name)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("unknown market {name}")))
    }

    pub fn matrix(&self, spec: &CombinationSpec) -> Result<SparseInteractionMatrix> {
        build_matrix(&self.interactions, spec, self.n_users(), self.n_items())
    }

    pub fn run(&self, market: &MarketId, kind: RunKind) -> Result<&RunFile<u32>> {
        self.runs.get(&(market.clone(), kind)).ok_or_else(|| {
            Error::invalid(format!("market {market} has no {} run file", kind.as_str()))
        })
    }

    /// Positive (user, item) pairs of one market split.
    pub fn qrel_pairs(&self, market: &MarketId, split: Split) -> Vec<(u32, u32)> {
        self.interactions
            .iter()
            .filter(|r| r.split == split && &r.market == market)
            .map(|r| (r.user, r.item))
            .collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        summarize(&self.interactions, &self.markets)
    }

    /// Write the snapshot as plain TSV files under `dir` and return its digest.
    pub fn save(&self, dir: &Path) -> Result<String> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = self.render_files();
        let digest = digest_files(&files);
        for (name, body) in &files {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
        let meta = SnapshotMeta {
            version: SNAPSHOT_VERSION,
            markets: self.markets.clone(),
            digest: digest.clone(),
        };
        write_atomic(&dir.join("snapshot.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        write_atomic(
            &dir.join("summary.json"),
            serde_json::to_string_pretty(&self.summary())?.as_bytes(),
        )?;
        Ok(digest)
    }

    fn render_files(&self) -> Vec<(String, String)> {
        let lines = |xs: &[String]| xs.iter().fold(String::new(), |mut acc, x| {
            acc.push_str(x);
            acc.push('\n');
            acc
        });
        let mut inter = String::new();
        for r in &self.interactions {
            let _ = writeln!(inter, "{}\t{}\t{}\t{}\t{}", r.user, r.item, r.rating, r.market, r.split.as_str());
        }
        let mut runs = String::new();
        for ((m, kind), run) in &self.runs {
            for e in run.entries() {
                let _ = write!(runs, "{}\t{}\t{}", m, kind.as_str(), e.user);
                for c in &e.candidates {
                    let _ = write!(runs, "\t{c}");
                }
                runs.push('\n');
            }
        }
        vec![
            ("users.tsv".into(), lines(self.users.raw_ids())),
            ("items.tsv".into(), lines(self.items.raw_ids())),
            ("interactions.tsv".into(), inter),
            ("runs.tsv".into(), runs),
        ]
    }

    /// Digest of the snapshot content, independent of where it is stored.
    pub fn digest(&self) -> String {
        digest_files(&self.render_files())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let meta: SnapshotMeta = serde_json::from_str(&read("snapshot.json")?)?;
        if meta.version != SNAPSHOT_VERSION {
            return Err(Error::invalid(format!("unsupported snapshot version {}", meta.version)));
        }
        let users = IdEncoder::from_reverse(read("users.tsv")?.lines().map(str::to_owned).collect())?;
        let items = IdEncoder::from_reverse(read("items.tsv")?.lines().map(str::to_owned).collect())?;
        let bad = |file: &str, line: usize, msg: &str| Error::Parse {
            file: dir.join(file).display().to_string(),
            line,
            message: msg.to_owned(),
        };
        let market_of = |s: &str| meta.markets.iter().find(|m| m.as_str() == s).cloned();

        let mut interactions = Vec::new();
        for (idx, line) in read("interactions.tsv")?.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let parsed = (|| {
                if f.len() != 5 {
                    return None;
                }
                Some(Interaction {
                    user: f[0].parse().ok()?,
                    item: f[1].parse().ok()?,
                    rating: f[2].parse().ok()?,
                    market: market_of(f[3])?,
                    split: Split::parse(f[4])?,
                })
            })();
            interactions.push(parsed.ok_or_else(|| bad("interactions.tsv", idx + 1, "malformed row"))?);
        }

        let mut grouped: BTreeMap<(MarketId, RunKind), Vec<RunEntry<u32>>> = BTreeMap::new();
        for (idx, line) in read("runs.tsv")?.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let parsed = (|| {
                let market = market_of(f.first()?)?;
                let kind = match *f.get(1)? {
                    "valid" => RunKind::Valid,
                    "test" => RunKind::Test,
                    _ => return None,
                };
                let user: u32 = f.get(2)?.parse().ok()?;
                let candidates: Option<Vec<u32>> = f[3..].iter().map(|c| c.parse().ok()).collect();
                Some(((market, kind), RunEntry { user, candidates: candidates? }))
            })();
            let (key, entry) = parsed.ok_or_else(|| bad("runs.tsv", idx + 1, "malformed row"))?;
            grouped.entry(key).or_default().push(entry);
        }
        let mut runs = BTreeMap::new();
        for (key, entries) in grouped {
            runs.insert(key, RunFile::new(entries)?);
        }
        let ds = Dataset { markets: meta.markets, users, items, interactions, runs };
        if ds.digest() != meta.digest {
            return Err(Error::invalid(format!(
                "snapshot in {} does not match its recorded digest",
                dir.display()
            )));
        }
        Ok(ds)
    }
}

fn digest_files(files: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (name, body) in files {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((body.len() as u64).to_le_bytes());
        h.update(body.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Write through a temporary sibling and rename into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::RawInteraction;

    fn files() -> Vec<MarketFiles> {
        let t1 = MarketId::new("t1").unwrap();
        let s1 = MarketId::new("s1").unwrap();
        let raw = |u: &str, i: &str, r: f64, m: &MarketId, split| RawInteraction {
            user: u.into(),
            item: i.into(),
            rating: r,
            market: m.clone(),
            split,
        };
        vec![
            MarketFiles {
                market: s1.clone(),
                interactions: vec![
                    raw("a", "x", 3.0, &s1, Split::Train),
                    raw("a", "y", 2.0, &s1, Split::Train5Core),
                ],
                valid_run: None,
                test_run: None,
                row_errors: vec![],
            },
            MarketFiles {
                market: t1.clone(),
                interactions: vec![
                    raw("b", "y", 4.0, &t1, Split::Train),
                    raw("b", "y", 5.0, &t1, Split::Train),
                    raw("b", "z", 5.0, &t1, Split::ValidQrel),
                ],
                valid_run: Some(
                    RunFile::new(vec![RunEntry { user: "b".into(), candidates: vec!["z".into(), "w".into()] }])
                        .unwrap(),
                ),
                test_run: None,
                row_errors: vec![],
            },
        ]
    }

    #[test]
    fn encodes_dedupes_and_marks() {
        let ds = Dataset::from_markets(files(), 5.0).unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 4, "run candidates are encoded too");
        assert_eq!(ds.interactions.len(), 4);
        let five = ds.interactions.iter().find(|r| r.split == Split::Train5Core).unwrap();
        assert_eq!(five.rating, 5.0);
        let t1 = ds.market("t1").unwrap();
        assert_eq!(ds.qrel_pairs(&t1, Split::ValidQrel), vec![(1, 2)]);
        assert_eq!(ds.run(&t1, RunKind::Valid).unwrap().n_pairs(), 2);
    }

    #[test]
    fn snapshot_round_trip_and_digest() {
        let ds = Dataset::from_markets(files(), 5.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let d1 = ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let d2 = back.save(dir.path()).unwrap();
        assert_eq!(d1, d2);

        fs::write(dir.path().join("interactions.tsv"), "0\t0\t3\ts1\ttrain\n").unwrap();
        assert!(Dataset::load(dir.path()).is_err());
    }
}
