use super::{par_rows, Neighbor, SimTable};
use crate::error::{Error, Result};
use crate::market_data::SparseInteractionMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingParams {
    /// Damping added to the user-pair overlap.
    pub alpha: f64,
    /// Users kept per item (lowest ids first) when enumerating user pairs.
    pub max_users_per_item: usize,
}

impl Default for SwingParams {
    fn default() -> Self {
        SwingParams { alpha: 1.0, max_users_per_item: 500 }
    }
}

impl SwingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("swing alpha must be > 0"));
        }
        if self.max_users_per_item < 2 {
            return Err(Error::invalid("swing max_users_per_item must be >= 2"));
        }
        Ok(())
    }
}

fn intersect_into(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
}

/// sim(i, j) = sum over user pairs u < v that both interacted with i and j of
/// 1 / (alpha + |I_u ∩ I_v|). Interactions are treated as binary. A pair only
/// counts when both users fall inside the per-item cap of i and of j, which
/// keeps the result symmetric.
pub fn swing_similarity(m: &SparseInteractionMatrix, params: SwingParams, k: usize) -> Result<SimTable> {
    params.validate()?;
    let cap = params.max_users_per_item;
    // largest user id still inside each item's cap
    let cutoff: Vec<u32> = (0..m.n_items() as u32)
        .map(|i| {
            let users = m.item_col(i).0;
            if users.len() > cap { users[cap - 1] } else { u32::MAX }
        })
        .collect();
    let rows = par_rows(m.n_items(), m.n_items(), |i, acc| {
        let users = m.item_col(i).0;
        let users = &users[..users.len().min(cap)];
        let mut common = Vec::new();
        for (a, &u) in users.iter().enumerate() {
            for &v in &users[a + 1..] {
                intersect_into(m.user_row(u).0, m.user_row(v).0, &mut common);
                let w = 1.0 / (params.alpha + common.len() as f64);
                for &j in &common {
                    // v > u, so v inside j's cap implies u is too
                    if j != i && v <= cutoff[j as usize] {
                        acc.add(j, w);
                    }
                }
            }
        }
        acc.drain().into_iter().map(|(j, sim)| Neighbor { id: j, sim }).collect()
    });
    Ok(SimTable::from_rows(rows, k))
}
