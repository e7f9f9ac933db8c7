use std::fs;
use std::path::{Path, PathBuf};

use super::{MarketId, RawInteraction, RunEntry, RunFile, Split};
use crate::error::{Error, Result};

/// A row that could not be parsed and was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    pub file: PathBuf,
    pub line: usize,
    pub message: String,
}

impl RowError {
    pub fn into_error(self) -> Error {
        Error::Parse {
            file: self.file.display().to_string(),
            line: self.line,
            message: self.message,
        }
    }
}

/// Everything read from one market directory, ids still raw.
#[derive(Clone, Debug)]
pub struct MarketFiles {
    pub market: MarketId,
    pub interactions: Vec<RawInteraction>,
    pub valid_run: Option<RunFile<String>>,
    pub test_run: Option<RunFile<String>>,
    pub row_errors: Vec<RowError>,
}

const MANDATORY: [Split; 2] = [Split::Train, Split::Train5Core];
const OPTIONAL: [Split; 2] = [Split::ValidQrel, Split::TestQrel];

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn is_header(line: &str) -> bool {
    line.split('\t').next().map(str::trim) == Some("userId")
}

/// Read `train.tsv` and `train_5core.tsv` (required) plus `valid_qrel.tsv`,
/// `test_qrel.tsv`, `valid_run.tsv` and `test_run.tsv` when present.
/// Malformed interaction rows are skipped and listed in `row_errors`.
pub fn load_market(dir: &Path, market: &MarketId) -> Result<MarketFiles> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut interactions = Vec::new();
    let mut row_errors = Vec::new();
    for split in MANDATORY.into_iter().chain(OPTIONAL) {
        let path = dir.join(split.file_name());
        if !path.exists() {
            if MANDATORY.contains(&split) {
                return Err(Error::MissingFile(path));
            }
            continue;
        }
        let text = read_to_string(&path)?;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || (idx == 0 && is_header(line)) {
                continue;
            }
            match parse_interaction(line) {
                Ok((user, item, rating)) => interactions.push(RawInteraction {
                    user,
                    item,
                    rating,
                    market: market.clone(),
                    split,
                }),
                Err(message) => row_errors.push(RowError {
                    file: path.clone(),
                    line: line_no,
                    message,
                }),
            }
        }
    }
    let read_optional_run = |name: &str| -> Result<Option<RunFile<String>>> {
        let path = dir.join(name);
        if path.exists() {
            read_run_file(&path).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(MarketFiles {
        market: market.clone(),
        interactions,
        valid_run: read_optional_run("valid_run.tsv")?,
        test_run: read_optional_run("test_run.tsv")?,
        row_errors,
    })
}

fn parse_interaction(line: &str) -> std::result::Result<(String, String, f64), String> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() < 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item id".into());
    }
    let rating: f64 = fields[2]
        .parse()
        .map_err(|_| format!("unparsable rating {:?}", fields[2]))?;
    if !(1.0..=5.0).contains(&rating) {
        return Err(format!("rating {rating} outside [1, 5]"));
    }
    Ok((fields[0].to_owned(), fields[1].to_owned(), rating))
}

/// One user per line: the user id followed by its candidates, separated by
/// tabs (commas inside a field are also accepted). An optional header whose
/// first field is `userId` is skipped.
pub fn read_run_file(path: &Path) -> Result<RunFile<String>> {
    let text = read_to_string(path)?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (idx == 0 && is_header(line)) {
            continue;
        }
        let mut fields = line
            .split(['\t', ','])
            .map(str::trim)
            .filter(|f| !f.is_empty());
        let user = fields.next().ok_or_else(|| Error::Parse {
            file: path.display().to_string(),
            line: idx + 1,
            message: "empty run line".into(),
        })?;
        let candidates: Vec<String> = fields.map(str::to_owned).collect();
        if candidates.is_empty() {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: idx + 1,
                message: format!("user {user} has no candidates"),
            });
        }
        entries.push(RunEntry { user: user.to_owned(), candidates });
    }
    RunFile::new(entries).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}
