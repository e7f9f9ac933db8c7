use super::{par_rows, Neighbor, SimTable};
use crate::market_data::SparseInteractionMatrix;

/// Cosine between item columns: sum_u r_ui r_uj / (|r_i| |r_j|).
/// Items without interactions never appear in any list.
pub fn item_cosine_similarity(m: &SparseInteractionMatrix, k: usize) -> SimTable {
    let norms: Vec<f64> = (0..m.n_items() as u32)
        .map(|i| m.item_col(i).1.iter().map(|r| r * r).sum())
        .collect();
    let rows = par_rows(m.n_items(), m.n_items(), |i, acc| {
        if norms[i as usize] == 0.0 {
            return Vec::new();
        }
        let (users, r_i) = m.item_col(i);
        for (&u, &rui) in users.iter().zip(r_i) {
            let (items, r_u) = m.user_row(u);
            for (&j, &ruj) in items.iter().zip(r_u) {
                if j != i {
                    acc.add(j, rui * ruj);
                }
            }
        }
        acc.drain()
            .into_iter()
            .map(|(j, dot)| Neighbor {
                id: j,
                sim: (dot / (norms[i as usize] * norms[j as usize]).sqrt()).min(1.0),
            })
            .collect()
    });
    SimTable::from_rows(rows, k)
}

/// Cosine between user rows.
pub fn user_cosine_similarity(m: &SparseInteractionMatrix, k: usize) -> SimTable {
    item_cosine_similarity(&m.transposed(), k)
}
