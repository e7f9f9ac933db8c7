use super::table::{ColumnInfo, ColumnSource};
use crate::error::{Error, Result};
use crate::graph_embeddings::{cosine, read_embedding_tsv, EmbeddingTable};
use crate::market_data::{IdEncoder, SparseInteractionMatrix};
use std::path::Path;

/// Loads a `name<TAB>v...` file into an item-id-indexed table. Names the
/// encoder does not know are ignored; items without a row are absent.
pub fn load_item_vectors(path: &Path, items: &IdEncoder) -> Result<EmbeddingTable> {
    let rows = read_embedding_tsv(path)?;
    let dim = rows.first().map(|r| r.1.len()).ok_or_else(|| Error::invalid(format!("{} has no vectors", path.display())))?;
    let mut t = EmbeddingTable::zeros(items.len(), dim);
    for i in 0..items.len() as u32 {
        t.mark_absent(i);
    }
    for (name, v) in rows {
        if let Some(i) = items.encode(&name) {
            t.set(i, &v);
        }
    }
    Ok(t)
}

/// Mean and max cosine between the candidate's vector and the vectors of
/// the user's history items in `m`. An uncovered candidate or history
/// gives 0 with the missing flag set.
pub fn external_embedding_features(
    vectors: &EmbeddingTable,
    keys: &[(u32, u32)],
    m: &SparseInteractionMatrix,
    prefix: &str,
) -> Vec<(ColumnInfo, Vec<f64>)> {
    let n = keys.len();
    let (mut mean, mut max, mut miss) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (r, &(u, c)) in keys.iter().enumerate() {
        let Some(cv) = vectors.get(c) else {
            miss[r] = 1.0;
            continue;
        };
        let sims: Vec<f64> = m.user_row(u).0.iter().filter_map(|&j| vectors.get(j).map(|v| cosine(cv, v))).collect();
        if sims.is_empty() {
            miss[r] = 1.0;
            continue;
        }
        mean[r] = sims.iter().sum::<f64>() / sims.len() as f64;
        max[r] = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let col = |suffix: &str| ColumnInfo { name: format!("{prefix}_{suffix}"), source: ColumnSource::External { name: prefix.into() } };
    let mut out = Vec::new();
    for (info, values) in [(col("mean_cos"), mean), (col("max_cos"), max)] {
        let flag = ColumnInfo {
            name: format!("{}__missing", info.name),
            source: ColumnSource::MissingIndicator { of: info.name.clone() },
        };
        out.push((info, values));
        out.push((flag, miss.clone()));
    }
    out
}
