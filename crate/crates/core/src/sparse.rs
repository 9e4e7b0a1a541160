//! Sparse symmetric positive-definite factorization.
//!
//! Matrices are stored as their upper triangle in compressed sparse column
//! form. The factorization is an up-looking Cholesky driven by the
//! elimination tree; the symbolic part depends only on the sparsity pattern
//! and is reused across numeric refactorizations.

use alloc::vec::Vec;

use crate::math;

/// Upper triangle (diagonal included) of a symmetric matrix, CSC layout.
/// Row indices are sorted within each column.
#[derive(Clone, Debug, PartialEq)]
pub struct CscUpper {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscUpper {
    /// Builds from `(row, col, value)` triplets; entries below the diagonal are
    /// mirrored into the upper triangle and duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .iter()
            .map(|&(r, c, v)| if r <= c { (c, r, v) } else { (r, c, v) })
            .collect();
        entries.sort_by_key(|e| (e.0, e.1));
        let mut col_ptr = alloc::vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in entries {
            assert!(c < n, "index out of bounds");
            if last == Some((c, r)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((c, r));
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Symmetric matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = alloc::vec![0.0; self.n];
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = self.values[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("sparsity pattern does not match the symbolic analysis")]
    PatternMismatch,
}

/// Elimination tree and column layout of the Cholesky factor.
#[derive(Clone, Debug)]
pub struct SymbolicCholesky {
    n: usize,
    parent: Vec<Option<usize>>,
    l_col_ptr: Vec<usize>,
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
}

/// Lower-triangular factor `L` with `A = L Lᵀ`, CSC with the diagonal first in
/// each column.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Nonzero pattern of row `k` of `L` in topological order, written to
/// `stack[top..]`; returns `top`.
fn ereach(
    a_col_ptr: &[usize],
    a_row_idx: &[usize],
    k: usize,
    parent: &[Option<usize>],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    let stamp = k + 1;
    mark[k] = stamp;
    for &row in &a_row_idx[a_col_ptr[k]..a_col_ptr[k + 1]] {
        let mut i = row;
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != stamp {
            stack[len] = i;
            len += 1;
            mark[i] = stamp;
            match parent[i] {
                Some(next) => i = next,
                None => break,
            }
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

impl SymbolicCholesky {
    pub fn analyze(a: &CscUpper) -> Self {
        let n = a.n;
        let mut parent = alloc::vec![None; n];
        let mut ancestor: Vec<Option<usize>> = alloc::vec![None; n];
        for k in 0..n {
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = Some(a.row_idx[p]);
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
        let mut counts = alloc::vec![1usize; n];
        let mut stack = alloc::vec![0usize; n];
        let mut mark = alloc::vec![0usize; n];
        for k in 0..n {
            let top = ereach(&a.col_ptr, &a.row_idx, k, &parent, &mut stack, &mut mark);
            for &j in &stack[top..n] {
                counts[j] += 1;
            }
        }
        let mut l_col_ptr = alloc::vec![0usize; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + counts[j];
        }
        Self { n, parent, l_col_ptr, a_col_ptr: a.col_ptr.clone(), a_row_idx: a.row_idx.clone() }
    }

    pub fn nnz_l(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    pub fn factor(&self, a: &CscUpper) -> Result<Cholesky, FactorError> {
        if a.n != self.n || a.col_ptr != self.a_col_ptr || a.row_idx != self.a_row_idx {
            return Err(FactorError::PatternMismatch);
        }
        let n = self.n;
        let nnz = self.nnz_l();
        let mut row_idx = alloc::vec![0usize; nnz];
        let mut values = alloc::vec![0.0; nnz];
        let mut next: Vec<usize> = self.l_col_ptr[..n].to_vec();
        let mut x = alloc::vec![0.0; n];
        let mut stack = alloc::vec![0usize; n];
        let mut mark = alloc::vec![0usize; n];
        for k in 0..n {
            let top = ereach(&a.col_ptr, &a.row_idx, k, &self.parent, &mut stack, &mut mark);
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let i = a.row_idx[p];
                if i <= k {
                    x[i] = a.values[p];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &stack[top..n] {
                let lkj = x[j] / values[self.l_col_ptr[j]];
                x[j] = 0.0;
                for p in self.l_col_ptr[j] + 1..next[j] {
                    x[row_idx[p]] -= values[p] * lkj;
                }
                d -= lkj * lkj;
                let p = next[j];
                next[j] += 1;
                row_idx[p] = k;
                values[p] = lkj;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(FactorError::NotPositiveDefinite(k));
            }
            let p = next[k];
            next[k] += 1;
            row_idx[p] = k;
            values[p] = math::sqrt(d);
        }
        Ok(Cholesky { n, col_ptr: self.l_col_ptr.clone(), row_idx, values })
    }
}

impl Cholesky {
    /// One-shot analysis and factorization.
    pub fn factor(a: &CscUpper) -> Result<Self, FactorError> {
        SymbolicCholesky::analyze(a).factor(a)
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for j in 0..self.n {
            let p0 = self.col_ptr[j];
            b[j] /= self.values[p0];
            let bj = b[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                b[self.row_idx[p]] -= self.values[p] * bj;
            }
        }
        for j in (0..self.n).rev() {
            let p0 = self.col_ptr[j];
            let mut s = b[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                s -= self.values[p] * b[self.row_idx[p]];
            }
            b[j] = s / self.values[p0];
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}
