use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::table::FeatureTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<f64>>,
    /// Constant columns: their off-diagonal entries are 0 by convention.
    pub constant: Vec<bool>,
}

/// Pearson r for every pair of the named columns.
pub fn feature_correlation(table: &FeatureTable, columns: &[&str]) -> Result<CorrelationMatrix> {
    if table.n_rows() < 2 {
        return Err(Error::invalid("correlation needs at least two rows"));
    }
    let centered: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|&c| {
            let v = table.column(c).ok_or_else(|| Error::invalid(format!("unknown column {c}")))?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let d: Vec<f64> = v.iter().map(|x| x - mean).collect();
            let ss = d.iter().map(|x| x * x).sum::<f64>();
            Ok((d, ss))
        })
        .collect::<Result<_>>()?;
    let k = columns.len();
    let constant: Vec<bool> = centered.iter().map(|c| c.1 == 0.0).collect();
    let mut r = vec![vec![0.0; k]; k];
    for a in 0..k {
        r[a][a] = 1.0;
        for b in a + 1..k {
            if constant[a] || constant[b] {
                continue;
            }
            let cov: f64 = centered[a].0.iter().zip(&centered[b].0).map(|(x, y)| x * y).sum();
            let v = (cov / (centered[a].1 * centered[b].1).sqrt()).clamp(-1.0, 1.0);
            r[a][b] = v;
            r[b][a] = v;
        }
    }
    Ok(CorrelationMatrix { names: columns.iter().map(|s| s.to_string()).collect(), r, constant })
}

impl CorrelationMatrix {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.names {
            let _ = write!(out, "\t{n}");
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.r) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}
