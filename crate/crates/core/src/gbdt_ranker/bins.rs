/// Upper bin boundaries for one feature. Bin `b` holds values in
/// `(t[b-1], t[b]]`; everything above the last boundary falls in the final bin.
pub fn build_bins(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= 1 {
        return Vec::new();
    }
    let max = *distinct.last().unwrap();
    if distinct.len() <= max_bins {
        distinct.pop();
        return distinct;
    }
    let n = sorted.len();
    let mut out: Vec<f64> = (1..max_bins)
        .map(|k| sorted[(k * n).div_ceil(max_bins) - 1])
        .filter(|&t| t < max)
        .collect();
    out.dedup();
    out
}

#[inline]
pub fn bin_of(thresholds: &[f64], v: f64) -> u8 {
    thresholds.partition_point(|&t| t < v) as u8
}

/// Column-major bin indices.
pub(crate) struct BinnedColumns {
    pub bins: Vec<Vec<u8>>,
    pub n_bins: Vec<usize>,
}

impl BinnedColumns {
    pub fn new(columns: &[&[f64]], thresholds: &[Vec<f64>], rows: &[usize]) -> Self {
        let bins = columns
            .iter()
            .zip(thresholds)
            .map(|(c, t)| rows.iter().map(|&r| bin_of(t, c[r])).collect())
            .collect();
        BinnedColumns { bins, n_bins: thresholds.iter().map(|t| t.len() + 1).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values_two_bins() {
        let t = build_bins(&[3.0, 1.0, 3.0, 1.0], 255);
        assert_eq!(t, vec![1.0]);
        assert_eq!(bin_of(&t, 1.0), 0);
        assert_eq!(bin_of(&t, 3.0), 1);
        assert_eq!(bin_of(&t, -7.0), 0);
        assert_eq!(bin_of(&t, 99.0), 1);
    }

    #[test]
    fn constant_is_one_bin() {
        assert!(build_bins(&[2.0; 10], 255).is_empty());
    }

    #[test]
    fn uniform_quantiles() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        let t = build_bins(&v, 10);
        assert_eq!(t.len(), 9);
        let mut counts = [0usize; 10];
        for &x in &v {
            counts[bin_of(&t, x) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (99..=101).contains(&c)), "{counts:?}");
    }
}
