use ndarray::Array2;

/// Nonnegative sparse codes, one row per document, stored as sorted
/// `(feature, value)` pairs with strictly positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    n_features: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl Activations {
    pub fn new(n_features: usize, mut rows: Vec<Vec<(u32, f64)>>) -> Self {
        for row in &mut rows {
            row.retain(|&(_, v)| v > 0.0);
            row.sort_by_key(|&(k, _)| k);
            debug_assert!(row.iter().all(|&(k, _)| (k as usize) < n_features));
        }
        Self { n_features, rows }
    }

    /// Keeps the strictly positive entries of a dense `N x K` matrix.
    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let rows = dense
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(k, &v)| (k as u32, v))
                    .collect()
            })
            .collect();
        Self { n_features: dense.ncols(), rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(u32, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// `s = ||a||_1` of row `i`.
    pub fn mass(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, v)| v).sum()
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.mass(i)).collect()
    }

    /// `theta_k = a_k / s` on the support of row `i`; `None` when the row is all zero.
    pub fn theta(&self, i: usize) -> Option<Vec<(u32, f64)>> {
        let s = self.mass(i);
        if s > 0.0 {
            Some(self.rows[i].iter().map(|&(k, v)| (k, v / s)).collect())
        } else {
            None
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows(), self.n_features));
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                out[[i, k as usize]] = v;
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Per-feature flag: active in at least one row.
    pub fn active_features(&self) -> Vec<bool> {
        let mut active = vec![false; self.n_features];
        for row in &self.rows {
            for &(k, _) in row {
                active[k as usize] = true;
            }
        }
        active
    }

    /// Rows `range` as a new set of activations.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { n_features: self.n_features, rows: self.rows[range].to_vec() }
    }

    pub fn concat(parts: impl IntoIterator<Item = Activations>) -> Option<Self> {
        let mut iter = parts.into_iter();
        let mut first = iter.next()?;
        for part in iter {
            assert_eq!(part.n_features, first.n_features);
            first.rows.extend(part.rows);
        }
        Some(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn theta_normalises_and_zero_rows_have_none() {
        let a = Activations::from_dense(&array![[0.0, 1.0, 3.0], [0.0, 0.0, 0.0]]);
        assert_eq!(a.theta(0).unwrap(), vec![(1, 0.25), (2, 0.75)]);
        assert_eq!(a.theta(1), None);
        assert_eq!(a.masses(), vec![4.0, 0.0]);
        assert_eq!(a.active_features(), vec![false, true, true]);
        assert_eq!(a.to_dense(), array![[0.0, 1.0, 3.0], [0.0, 0.0, 0.0]]);
    }
}
