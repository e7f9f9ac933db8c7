use std::collections::HashSet;

use super::{CombinationSpec, Interaction, Split};
use crate::error::{Error, Result};

/// User x item interactions stored twice: compressed by user and by item.
/// Both views hold the same nonzeros with strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseInteractionMatrix {
    n_users: usize,
    n_items: usize,
    user_ptr: Vec<usize>,
    user_items: Vec<u32>,
    user_vals: Vec<f64>,
    item_ptr: Vec<usize>,
    item_users: Vec<u32>,
    item_vals: Vec<f64>,
}

impl SparseInteractionMatrix {
    /// Duplicate (user, item) triplets resolve to the last occurrence.
    pub fn from_triplets<I>(n_users: usize, n_items: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, f64)>,
    {
        let mut trips: Vec<(u32, u32, f64)> = triplets.into_iter().collect();
        for &(u, i, r) in &trips {
            if u as usize >= n_users || i as usize >= n_items {
                return Err(Error::invalid(format!(
                    "entry ({u}, {i}) outside {n_users}x{n_items} matrix"
                )));
            }
            if !r.is_finite() {
                return Err(Error::invalid(format!("non-finite value at ({u}, {i})")));
            }
        }
        // stable: equal keys keep insertion order, so the last one wins below
        trips.sort_by_key(|&(u, i, _)| (u, i));
        let mut dedup: Vec<(u32, u32, f64)> = Vec::with_capacity(trips.len());
        for t in trips {
            match dedup.last_mut() {
                Some(last) if last.0 == t.0 && last.1 == t.1 => *last = t,
                _ => dedup.push(t),
            }
        }

        let mut user_ptr = vec![0usize; n_users + 1];
        for &(u, _, _) in &dedup {
            user_ptr[u as usize + 1] += 1;
        }
        for k in 0..n_users {
            user_ptr[k + 1] += user_ptr[k];
        }
        let user_items: Vec<u32> = dedup.iter().map(|t| t.1).collect();
        let user_vals: Vec<f64> = dedup.iter().map(|t| t.2).collect();

        let mut item_ptr = vec![0usize; n_items + 1];
        for &(_, i, _) in &dedup {
            item_ptr[i as usize + 1] += 1;
        }
        for k in 0..n_items {
            item_ptr[k + 1] += item_ptr[k];
        }
        let mut fill = item_ptr.clone();
        let mut item_users = vec![0u32; dedup.len()];
        let mut item_vals = vec![0f64; dedup.len()];
        // dedup is sorted by user, so each item column receives users in increasing order
        for &(u, i, r) in &dedup {
            let pos = &mut fill[i as usize];
            item_users[*pos] = u;
            item_vals[*pos] = r;
            *pos += 1;
        }

        Ok(SparseInteractionMatrix {
            n_users,
            n_items,
            user_ptr,
            user_items,
            user_vals,
            item_ptr,
            item_users,
            item_vals,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.user_items.len()
    }

    /// Items of `user` (sorted) and their ratings. Out-of-range users are empty.
    pub fn user_row(&self, user: u32) -> (&[u32], &[f64]) {
        let u = user as usize;
        if u >= self.n_users {
            return (&[], &[]);
        }
        let (a, b) = (self.user_ptr[u], self.user_ptr[u + 1]);
        (&self.user_items[a..b], &self.user_vals[a..b])
    }

    /// Users of `item` (sorted) and their ratings. Out-of-range items are empty.
    pub fn item_col(&self, item: u32) -> (&[u32], &[f64]) {
        let i = item as usize;
        if i >= self.n_items {
            return (&[], &[]);
        }
        let (a, b) = (self.item_ptr[i], self.item_ptr[i + 1]);
        (&self.item_users[a..b], &self.item_vals[a..b])
    }

    pub fn user_degree(&self, user: u32) -> usize {
        self.user_row(user).0.len()
    }

    pub fn item_degree(&self, item: u32) -> usize {
        self.item_col(item).0.len()
    }

    pub fn rating(&self, user: u32, item: u32) -> Option<f64> {
        let (items, vals) = self.user_row(user);
        items.binary_search(&item).ok().map(|k| vals[k])
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.rating(user, item).is_some()
    }

    /// Users with at least one interaction.
    pub fn active_users(&self) -> usize {
        (0..self.n_users).filter(|&u| self.user_ptr[u + 1] > self.user_ptr[u]).count()
    }

    /// Items with at least one interaction, ascending.
    pub fn active_items(&self) -> Vec<u32> {
        (0..self.n_items as u32).filter(|&i| self.item_degree(i) > 0).collect()
    }

    /// Same sparsity pattern with every value set to 1.
    pub fn binarized(&self) -> Self {
        let mut out = self.clone();
        out.user_vals.iter_mut().for_each(|v| *v = 1.0);
        out.item_vals.iter_mut().for_each(|v| *v = 1.0);
        out
    }

    /// Swap the roles of users and items.
    pub fn transposed(&self) -> Self {
        SparseInteractionMatrix {
            n_users: self.n_items,
            n_items: self.n_users,
            user_ptr: self.item_ptr.clone(),
            user_items: self.item_users.clone(),
            user_vals: self.item_vals.clone(),
            item_ptr: self.user_ptr.clone(),
            item_users: self.user_items.clone(),
            item_vals: self.user_vals.clone(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n_users as u32).flat_map(move |u| {
            let (items, vals) = self.user_row(u);
            items.iter().zip(vals).map(move |(&i, &r)| (u, i, r))
        })
    }

    /// Full check that both views describe the same nonzeros with strictly
    /// increasing indices.
    pub fn is_consistent(&self) -> bool {
        let strictly_increasing = |xs: &[u32]| xs.windows(2).all(|w| w[0] < w[1]);
        let rows_ok = (0..self.n_users as u32).all(|u| strictly_increasing(self.user_row(u).0));
        let cols_ok = (0..self.n_items as u32).all(|i| strictly_increasing(self.item_col(i).0));
        if !(rows_ok && cols_ok) || self.item_users.len() != self.user_items.len() {
            return false;
        }
        let mut from_rows: Vec<(u32, u32, u64)> =
            self.triplets().map(|(u, i, r)| (u, i, r.to_bits())).collect();
        let mut from_cols: Vec<(u32, u32, u64)> = (0..self.n_items as u32)
            .flat_map(|i| {
                let (users, vals) = self.item_col(i);
                users.iter().zip(vals).map(move |(&u, &r)| (u, i, r.to_bits()))
            })
            .collect();
        from_rows.sort_unstable();
        from_cols.sort_unstable();
        from_rows == from_cols
    }
}

/// Union of the combination's markets: `train`, `train_5core` and `valid_qrel`
/// rows, never `test_qrel`. With `exclude_valid_of_target`, every (user, item)
/// pair from the target's `valid_qrel` is removed whatever split it came from.
pub fn build_matrix(
    rows: &[Interaction],
    spec: &CombinationSpec,
    n_users: usize,
    n_items: usize,
) -> Result<SparseInteractionMatrix> {
    let held_out: HashSet<(u32, u32)> = if spec.exclude_valid_of_target {
        rows.iter()
            .filter(|r| r.split == Split::ValidQrel && r.market == spec.target)
            .map(|r| (r.user, r.item))
            .collect()
    } else {
        HashSet::new()
    };
    let trips = rows
        .iter()
        .filter(|r| r.split != Split::TestQrel && spec.contains(&r.market))
        .filter(|r| !held_out.contains(&(r.user, r.item)))
        .map(|r| (r.user, r.item, r.rating));
    SparseInteractionMatrix::from_triplets(n_users, n_items, trips)
}
