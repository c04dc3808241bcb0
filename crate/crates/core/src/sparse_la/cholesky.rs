//! Up-looking sparse Cholesky factorization `P A Pᵀ = L Lᵀ`.
//!
//! The symbolic analysis (ordering, elimination tree, column counts) depends
//! only on the sparsity pattern and is shared through an `Arc` so that every
//! refactorization with new values skips it.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Ordering, SparseSym};
use crate::error::{Error, Result};

/// Relative pivot tolerance: a pivot must exceed this times the largest
/// diagonal entry of the input.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug)]
pub struct SymbolicCholesky {
    dim: usize,
    ordering: Ordering,
    perm: Vec<usize>,
    pattern_col_ptr: Vec<usize>,
    pattern_row_idx: Vec<usize>,
    // Upper triangle of P A Pᵀ by columns.
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    a_to_c: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_col_ptr: Vec<usize>,
}

/// Numeric factor; the columns of `L` store the diagonal first.
#[derive(Debug, Clone)]
pub struct CholFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
}

/// Factorize `a` with the given ordering.
pub fn factorize(a: &SparseSym, ordering: Ordering) -> Result<CholFactor> {
    SymbolicCholesky::analyze(a, ordering).factor(a)
}

struct Reach {
    stack: Vec<usize>,
    mark: Vec<bool>,
}

impl Reach {
    fn new(n: usize) -> Self {
        Self { stack: vec![0; n], mark: vec![false; n] }
    }

    /// Nonzero pattern of row `k` of `L` in topological order, written into
    /// `stack[top..n]`; returns `top`.
    fn row(&mut self, sym: &SymbolicCholesky, k: usize) -> usize {
        let n = sym.dim;
        let mut top = n;
        self.mark[k] = true;
        for p in sym.c_col_ptr[k]..sym.c_col_ptr[k + 1] {
            let mut i = sym.c_row_idx[p];
            if i > k {
                continue;
            }
            let mut len = 0;
            while !self.mark[i] {
                self.stack[len] = i;
                len += 1;
                self.mark[i] = true;
                i = sym.parent[i].expect("path reaches k before the root");
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                self.stack[top] = self.stack[len];
            }
        }
        for t in top..n {
            self.mark[self.stack[t]] = false;
        }
        self.mark[k] = false;
        top
    }
}

impl SymbolicCholesky {
    pub fn analyze(a: &SparseSym, ordering: Ordering) -> Arc<Self> {
        let n = a.dim();
        let perm = ordering.permutation(a);
        let mut pinv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }

        // Scatter the lower triangle of A into the upper triangle of P A Pᵀ.
        let mut placed: Vec<(usize, usize, usize)> = a
            .iter()
            .enumerate()
            .map(|(p, (i, j, _))| {
                let (pi, pj) = (pinv[i], pinv[j]);
                (pi.max(pj), pi.min(pj), p)
            })
            .collect();
        placed.sort_unstable();
        let mut c_col_ptr = vec![0; n + 1];
        let mut c_row_idx = Vec::with_capacity(placed.len());
        let mut a_to_c = vec![0; placed.len()];
        for (pos, &(col, row, p)) in placed.iter().enumerate() {
            c_col_ptr[col + 1] += 1;
            c_row_idx.push(row);
            a_to_c[p] = pos;
        }
        for k in 0..n {
            c_col_ptr[k + 1] += c_col_ptr[k];
        }

        // Elimination tree with path compression through `ancestor`.
        let mut parent = vec![None; n];
        let mut ancestor: Vec<Option<usize>> = vec![None; n];
        for k in 0..n {
            for p in c_col_ptr[k]..c_col_ptr[k + 1] {
                let mut i = Some(c_row_idx[p]);
                while let Some(ii) = i {
                    if ii >= k {
                        break;
                    }
                    let next = ancestor[ii];
                    ancestor[ii] = Some(k);
                    if next.is_none() {
                        parent[ii] = Some(k);
                    }
                    i = next;
                }
            }
        }

        let mut sym = Self {
            dim: n,
            ordering,
            perm,
            pattern_col_ptr: a.col_ptr().to_vec(),
            pattern_row_idx: a.row_idx().to_vec(),
            c_col_ptr,
            c_row_idx,
            a_to_c,
            parent,
            l_col_ptr: Vec::new(),
        };

        let mut counts = vec![1usize; n];
        let mut reach = Reach::new(n);
        for k in 0..n {
            let top = reach.row(&sym, k);
            for t in top..n {
                counts[reach.stack[t]] += 1;
            }
        }
        let mut l_col_ptr = vec![0; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + counts[k];
        }
        sym.l_col_ptr = l_col_ptr;
        Arc::new(sym)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Number of stored entries of `L`.
    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.dim]
    }

    pub fn matches_pattern(&self, a: &SparseSym) -> bool {
        a.dim() == self.dim && a.col_ptr() == self.pattern_col_ptr && a.row_idx() == self.pattern_row_idx
    }

    /// Numeric factorization reusing this analysis. `a` must have exactly
    /// the analysed pattern.
    pub fn factor(self: &Arc<Self>, a: &SparseSym) -> Result<CholFactor> {
        if !self.matches_pattern(a) {
            return Err(Error::PatternMismatch);
        }
        let n = self.dim;
        let mut cx = vec![0.0; self.c_row_idx.len()];
        for (p, v) in a.values().iter().enumerate() {
            cx[self.a_to_c[p]] = *v;
        }
        let tol = PIVOT_TOLERANCE * a.max_abs_diagonal();

        let lp = &self.l_col_ptr;
        let lnz = lp[n];
        let mut li = vec![0usize; lnz];
        let mut lx = vec![0.0f64; lnz];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut reach = Reach::new(n);

        for k in 0..n {
            let top = reach.row(self, k);
            for p in self.c_col_ptr[k]..self.c_col_ptr[k + 1] {
                x[self.c_row_idx[p]] = cx[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for t in top..n {
                let i = reach.stack[t];
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > tol) {
                return Err(Error::NotPositiveDefinite { column: self.perm[k], pivot: d });
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(CholFactor { symbolic: Arc::clone(self), l_row_idx: li, l_values: lx })
    }
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.dim
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn perm(&self) -> &[usize] {
        &self.symbolic.perm
    }

    /// Entries of `L` as `(row, col, value)` in the permuted frame.
    pub fn lower_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let lp = &self.symbolic.l_col_ptr;
        (0..self.dim())
            .flat_map(move |j| (lp[j]..lp[j + 1]).map(move |p| (self.l_row_idx[p], j, self.l_values[p])))
    }

    pub fn diag(&self) -> Vec<f64> {
        let lp = &self.symbolic.l_col_ptr;
        (0..self.dim()).map(|j| self.l_values[lp[j]]).collect()
    }

    /// Lower bandwidth of `L`.
    pub fn bandwidth(&self) -> usize {
        self.lower_entries().map(|(i, j, _)| i - j).max().unwrap_or(0)
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: len });
        }
        Ok(())
    }

    fn forward(&self, y: &mut [f64]) {
        let lp = &self.symbolic.l_col_ptr;
        for j in 0..self.dim() {
            y[j] /= self.l_values[lp[j]];
            let yj = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                y[self.l_row_idx[p]] -= self.l_values[p] * yj;
            }
        }
    }

    fn backward(&self, y: &mut [f64]) {
        let lp = &self.symbolic.l_col_ptr;
        for j in (0..self.dim()).rev() {
            let mut acc = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                acc -= self.l_values[p] * y[self.l_row_idx[p]];
            }
            y[j] = acc / self.l_values[lp[j]];
        }
    }

    fn to_permuted(&self, x: &[f64]) -> Vec<f64> {
        self.perm().iter().map(|&p| x[p]).collect()
    }

    fn from_permuted(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; y.len()];
        for (k, &p) in self.perm().iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    // Throughout, R = Pᵀ L is the Cholesky root of A in the original index
    // frame: A = R Rᵀ.

    /// `R⁻¹ b = L⁻¹ P b`.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b.len())?;
        let mut y = self.to_permuted(b);
        self.forward(&mut y);
        Ok(y)
    }

    /// `R⁻ᵀ v = Pᵀ L⁻ᵀ v`.
    pub fn solve_upper(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len())?;
        let mut y = v.to_vec();
        self.backward(&mut y);
        Ok(self.from_permuted(&y))
    }

    /// `A⁻¹ b`.
    pub fn solve_full(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b.len())?;
        let mut y = self.to_permuted(b);
        self.forward(&mut y);
        self.backward(&mut y);
        Ok(self.from_permuted(&y))
    }

    /// `Rᵀ x = Lᵀ P x`.
    pub fn apply_lower_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let xp = self.to_permuted(x);
        let lp = &self.symbolic.l_col_ptr;
        Ok((0..self.dim())
            .map(|j| (lp[j]..lp[j + 1]).map(|p| self.l_values[p] * xp[self.l_row_idx[p]]).sum())
            .collect())
    }

    /// `R v = Pᵀ L v`.
    pub fn apply_lower(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len())?;
        let lp = &self.symbolic.l_col_ptr;
        let mut y = vec![0.0; self.dim()];
        for j in 0..self.dim() {
            for p in lp[j]..lp[j + 1] {
                y[self.l_row_idx[p]] += self.l_values[p] * v[j];
            }
        }
        Ok(self.from_permuted(&y))
    }

    /// Exact draw from `N(mean, A⁻¹)`: `mean + R⁻ᵀ u`, `u` standard normal.
    pub fn sample_gmrf<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check(mean.len())?;
        let u = standard_normals(self.dim(), rng);
        let mut x = self.solve_upper(&u)?;
        for (xi, m) in x.iter_mut().zip(mean) {
            *xi += m;
        }
        Ok(x)
    }
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
