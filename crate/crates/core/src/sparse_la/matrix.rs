use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix holding only its lower triangle in compressed
/// sparse column form.
///
/// Row indices are sorted within each column and the diagonal entry is always
/// stored first, even when its value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Assemble from `(row, col, value)` triplets. Entries above the diagonal
    /// are mirrored into the lower triangle and duplicates are summed.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(Error::InvalidEntry { row: i, col: j, dim });
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            entries.push((c, r, v));
        }
        entries.extend((0..dim).map(|k| (k, k, 0.0)));
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in entries {
            if last == Some((c, r)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for k in 0..dim {
            col_ptr[k + 1] += col_ptr[k];
        }
        Ok(Self { dim, col_ptr, row_idx, values })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        Self {
            dim,
            col_ptr: (0..=dim).collect(),
            row_idx: (0..dim).collect(),
            values: diag.to_vec(),
        }
    }

    /// Build directly from the lower-triangle dense matrix; used for tests and
    /// small problems. Exact zeros off the diagonal are dropped.
    pub fn from_dense(dense: &DMatrix<f64>) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(Error::DimensionMismatch { expected: dense.nrows(), found: dense.ncols() });
        }
        let n = dense.nrows();
        let mut trip = Vec::new();
        for j in 0..n {
            for i in j..n {
                let v = dense[(i, j)];
                if i == j || v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterate stored lower-triangle entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c >= self.dim {
            return 0.0;
        }
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(k) => self.values[self.col_ptr[c] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.values[self.col_ptr[j]]).collect()
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        self.diagonal().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut y = vec![0.0; self.dim];
        for j in 0..self.dim {
            let xj = x[j];
            let start = self.col_ptr[j];
            y[j] += self.values[start] * xj;
            let mut acc = 0.0;
            for p in start + 1..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                y[i] += v * xj;
                acc += v * x[i];
            }
            y[j] += acc;
        }
        Ok(y)
    }

    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        let mut total = 0.0;
        for j in 0..self.dim {
            let start = self.col_ptr[j];
            let xj = x[j];
            total += self.values[start] * xj * xj;
            let mut off = 0.0;
            for p in start + 1..self.col_ptr[j + 1] {
                off += self.values[p] * x[self.row_idx[p]];
            }
            total += 2.0 * off * xj;
        }
        Ok(total)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.dim == other.dim && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    /// `Σ coef_k · A_k` for matrices sharing one sparsity pattern.
    pub fn linear_combination(terms: &[(f64, &SparseSym)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or(Error::EmptyInput)?;
        let mut out = (*first).clone();
        out.values.iter_mut().for_each(|v| *v = 0.0);
        for (coef, m) in terms {
            if !m.same_pattern(&out) {
                return Err(Error::PatternMismatch);
            }
            for (o, v) in out.values.iter_mut().zip(&m.values) {
                *o += coef * v;
            }
        }
        Ok(out)
    }

    /// Union of the sparsity patterns of several matrices, all values zero.
    pub fn union_pattern(mats: &[&SparseSym]) -> Result<Self> {
        let dim = mats.first().ok_or(Error::EmptyInput)?.dim;
        let mut trip = Vec::new();
        for m in mats {
            if m.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim });
            }
            trip.extend(m.iter().map(|(i, j, _)| (i, j, 0.0)));
        }
        Self::from_triplets(dim, trip)
    }

    /// Copy the values of `self` into the (larger) sparsity pattern of
    /// `pattern`. Fails if `self` has an entry the pattern lacks.
    pub fn embed_into(&self, pattern: &SparseSym) -> Result<Self> {
        if pattern.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: pattern.dim, found: self.dim });
        }
        let mut out = pattern.clone();
        out.values.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.dim {
            let target = &pattern.row_idx[pattern.col_ptr[j]..pattern.col_ptr[j + 1]];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let k = target.binary_search(&self.row_idx[p]).map_err(|_| Error::PatternMismatch)?;
                out.values[pattern.col_ptr[j] + k] += self.values[p];
            }
        }
        Ok(out)
    }

    /// Symmetric adjacency lists of the off-diagonal pattern.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.dim];
        for j in 0..self.dim {
            for p in self.col_ptr[j] + 1..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        adj
    }

    /// Lower bandwidth `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.iter().map(|(i, j, _)| i - j).max().unwrap_or(0)
    }

    /// Lower bandwidth after the symmetric permutation `P A Pᵀ`, where
    /// `perm[k]` is the original index placed at position `k`.
    pub fn permuted_bandwidth(&self, perm: &[usize]) -> usize {
        let mut pinv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        self.iter().map(|(i, j, _)| pinv[i].abs_diff(pinv[j])).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter() {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        d
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: len });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_mirror_and_sum_duplicates() {
        let a = SparseSym::from_triplets(3, [(0, 1, 1.0), (1, 0, 2.0), (2, 2, 4.0)]).unwrap();
        assert_eq!(a.get(1, 0), 3.0);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.diagonal(), vec![0.0, 0.0, 4.0]);
    }

    #[test]
    fn out_of_range_entry_is_rejected() {
        assert!(matches!(
            SparseSym::from_triplets(2, [(2, 0, 1.0)]),
            Err(Error::InvalidEntry { .. })
        ));
    }

    #[test]
    fn quad_form_identity_and_zero() {
        let id = SparseSym::identity(2);
        assert_eq!(id.quad_form(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(id.quad_form(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(id.matvec(&[1.0]).is_err());
    }

    #[test]
    fn embedding_requires_pattern_containment() {
        let small = SparseSym::from_triplets(3, [(1, 0, 1.0)]).unwrap();
        let big = SparseSym::from_triplets(3, [(1, 0, 0.0), (2, 1, 0.0)]).unwrap();
        let e = small.embed_into(&big).unwrap();
        assert!(e.same_pattern(&big));
        assert_eq!(e.get(1, 0), 1.0);
        assert!(big.embed_into(&SparseSym::identity(3)).is_err());
    }
}
