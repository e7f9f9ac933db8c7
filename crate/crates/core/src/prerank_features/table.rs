use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::CombinationSpec;

/// Where a column came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSource {
    Scorer { scorer: String, params_hash: String, combination: CombinationSpec },
    Statistic { name: String, scope: String },
    External { name: String },
    MissingIndicator { of: String },
    Other { note: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub source: ColumnSource,
}

impl ColumnInfo {
    pub fn other(name: impl Into<String>) -> Self {
        ColumnInfo { name: name.into(), source: ColumnSource::Other { note: String::new() } }
    }
}

/// Rows keyed by (user, item) in encoded ids, named finite columns, optional
/// 0/1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    keys: Vec<(u32, u32)>,
    labels: Option<Vec<f64>>,
    catalog: Vec<ColumnInfo>,
    columns: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(keys: Vec<(u32, u32)>, labels: Option<Vec<f64>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(keys.len());
        if let Some(k) = keys.iter().find(|k| !seen.insert(**k)) {
            return Err(Error::invalid(format!("duplicate row key {k:?}")));
        }
        if let Some(l) = &labels {
            if l.len() != keys.len() {
                return Err(Error::invalid("label count differs from row count"));
            }
            if l.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        Ok(FeatureTable { keys, labels, catalog: Vec::new(), columns: Vec::new() })
    }

    pub fn add_column(&mut self, info: ColumnInfo, values: Vec<f64>) -> Result<()> {
        if values.len() != self.keys.len() {
            return Err(Error::invalid(format!(
                "column {} has {} values for {} rows",
                info.name,
                values.len(),
                self.keys.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("column {} has non-finite values", info.name)));
        }
        if info.name.is_empty() || info.name.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("bad column name {:?}", info.name)));
        }
        if self.position(&info.name).is_some() {
            return Err(Error::invalid(format!("duplicate column {}", info.name)));
        }
        self.catalog.push(info);
        self.columns.push(values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn keys(&self) -> &[(u32, u32)] {
        &self.keys
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<f64>) -> Result<()> {
        let t = FeatureTable::new(self.keys.clone(), Some(labels))?;
        self.labels = t.labels;
        Ok(())
    }

    pub fn catalog(&self) -> &[ColumnInfo] {
        &self.catalog
    }

    pub fn names(&self) -> Vec<&str> {
        self.catalog.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.catalog.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.position(name).map(|p| self.columns[p].as_slice())
    }

    pub fn column_at(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    /// Columns in the given order; unknown names are an error.
    pub fn select(&self, names: &[&str]) -> Result<FeatureTable> {
        let mut out = FeatureTable { keys: self.keys.clone(), labels: self.labels.clone(), catalog: Vec::new(), columns: Vec::new() };
        for &n in names {
            let p = self.position(n).ok_or_else(|| Error::invalid(format!("unknown column {n}")))?;
            out.add_column(self.catalog[p].clone(), self.columns[p].clone())?;
        }
        Ok(out)
    }

    pub fn without(&self, drop: &[&str]) -> FeatureTable {
        let keep: Vec<&str> = self.names().into_iter().filter(|n| !drop.contains(n)).collect();
        self.select(&keep).expect("names come from the table")
    }

    pub fn rows(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            keys: idx.iter().map(|&r| self.keys[r]).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&r| l[r]).collect()),
            catalog: self.catalog.clone(),
            columns: self.columns.iter().map(|c| idx.iter().map(|&r| c[r]).collect()).collect(),
        }
    }

    /// Appends another table's columns; keys must match exactly.
    pub fn extend(&mut self, other: FeatureTable) -> Result<()> {
        if other.keys != self.keys {
            return Err(Error::invalid("cannot merge tables with different row keys"));
        }
        for (info, col) in other.catalog.into_iter().zip(other.columns) {
            self.add_column(info, col)?;
        }
        Ok(())
    }

    /// Row indices per user, users ascending.
    pub fn user_rows(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (r, &(u, _)) in self.keys.iter().enumerate() {
            out.entry(u).or_default().push(r);
        }
        out
    }

    pub fn catalog_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".catalog.json");
        PathBuf::from(s)
    }

    /// `user<TAB>item[<TAB>label]<TAB>features...` plus `<path>.catalog.json`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("user\titem");
        if self.labels.is_some() {
            out.push_str("\tlabel");
        }
        for c in &self.catalog {
            out.push('\t');
            out.push_str(&c.name);
        }
        out.push('\n');
        for (r, (u, i)) in self.keys.iter().enumerate() {
            let _ = write!(out, "{u}\t{i}");
            if let Some(l) = &self.labels {
                let _ = write!(out, "\t{}", l[r]);
            }
            for c in &self.columns {
                let _ = write!(out, "\t{}", c[r]);
            }
            out.push('\n');
        }
        let catalog = serde_json::to_string_pretty(&self.catalog)?;
        crate::market_data::write_atomic_pub(&Self::catalog_path(path), catalog.as_bytes())?;
        crate::market_data::write_atomic_pub(path, out.as_bytes())
    }

    pub fn read_tsv(path: &Path) -> Result<FeatureTable> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cpath = Self::catalog_path(path);
        let catalog: Vec<ColumnInfo> =
            serde_json::from_str(&fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?)?;
        let err = |line: usize, message: String| Error::Parse { file: path.display().to_string(), line, message };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| err(1, "empty feature table".into()))?.split('\t').collect();
        let has_label = header.get(2) == Some(&"label");
        let first = if has_label { 3 } else { 2 };
        if header.len() < 2 || header[0] != "user" || header[1] != "item" {
            return Err(err(1, "header must start with user<TAB>item".into()));
        }
        let names = &header[first..];
        if names.len() != catalog.len() || names.iter().zip(&catalog).any(|(n, c)| *n != c.name) {
            return Err(err(1, "header does not match the column catalog".into()));
        }
        let mut keys = Vec::new();
        let mut labels = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (idx, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != header.len() {
                return Err(err(idx + 2, format!("expected {} fields, found {}", header.len(), f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(idx + 2, format!("bad number {s:?}")));
            let id = |s: &str| s.parse::<u32>().map_err(|_| err(idx + 2, format!("bad id {s:?}")));
            keys.push((id(f[0])?, id(f[1])?));
            if has_label {
                labels.push(num(f[2])?);
            }
            for (c, v) in columns.iter_mut().zip(&f[first..]) {
                c.push(num(v)?);
            }
        }
        let mut t = FeatureTable::new(keys, has_label.then_some(labels))?;
        for (info, col) in catalog.into_iter().zip(columns) {
            t.add_column(info, col)?;
        }
        Ok(t)
    }
}
