use super::{par_rows, Neighbor, SimTable};
use crate::market_data::SparseInteractionMatrix;

/// 2x2 co-occurrence contingency table for an item pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LlrCounts {
    /// users with both items
    pub k11: u64,
    /// users with the first item only
    pub k12: u64,
    /// users with the second item only
    pub k21: u64,
    /// users with neither
    pub k22: u64,
}

#[inline]
fn x_log_x(x: u64) -> f64 {
    if x == 0 {
        0.0
    } else {
        let x = x as f64;
        x * x.ln()
    }
}

/// Unnormalized entropy: N ln N - sum x ln x, with 0 ln 0 = 0.
fn entropy(xs: &[u64]) -> f64 {
    x_log_x(xs.iter().sum()) - xs.iter().map(|&x| x_log_x(x)).sum::<f64>()
}

/// Dunning's G² statistic, 2 (H(rows) + H(cols) - H(matrix)), clamped at 0.
pub fn llr(c: LlrCounts) -> f64 {
    let matrix = entropy(&[c.k11, c.k12, c.k21, c.k22]);
    let rows = entropy(&[c.k11 + c.k12, c.k21 + c.k22]);
    let cols = entropy(&[c.k11 + c.k21, c.k12 + c.k22]);
    (2.0 * (rows + cols - matrix)).max(0.0)
}

/// LLR of every co-occurring item pair over binary interactions; the user
/// universe is the matrix's active users. Pairs without a common user are
/// left out of the table.
pub fn llr_item_similarity(m: &SparseInteractionMatrix, k: usize) -> SimTable {
    let n_active = m.active_users() as u64;
    let rows = par_rows(m.n_items(), m.n_items(), |i, acc| {
        for &u in m.item_col(i).0 {
            for &j in m.user_row(u).0 {
                if j != i {
                    acc.add(j, 1.0);
                }
            }
        }
        let deg_i = m.item_degree(i) as u64;
        acc.drain()
            .into_iter()
            .map(|(j, co)| {
                let k11 = co as u64;
                let k12 = deg_i - k11;
                let k21 = m.item_degree(j) as u64 - k11;
                let k22 = n_active - k11 - k12 - k21;
                Neighbor { id: j, sim: llr(LlrCounts { k11, k12, k21, k22 }) }
            })
            .collect()
    });
    SimTable::from_rows(rows, k)
}
