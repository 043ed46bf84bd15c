//! Sparse matrices and a right-looking sparse LU.
//!
//! Pivots are chosen column-first (fewest active entries) and then, inside
//! that column, by threshold partial pivoting: any row whose entry is at least
//! `PIVOT_THRESHOLD` times the column maximum is admissible, and the shortest
//! such row wins. This keeps fill low on network Jacobians and KKT matrices
//! while bounding element growth.

use thiserror::Error;

const PIVOT_THRESHOLD: f64 = 0.1;

/// Coordinate-format builder; duplicates are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.entries.push((row, col, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_rows + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for i in 0..self.n_rows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; self.entries.len()];
        let mut vals = vec![0.0; self.entries.len()];
        let mut next = counts.clone();
        for &(r, c, v) in &self.entries {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        indptr.push(0);
        for r in 0..self.n_rows {
            let mut row: Vec<(usize, f64)> = (counts[r]..counts[r + 1])
                .map(|k| (cols[k], vals[k]))
                .collect();
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                match indices.last() {
                    Some(&last) if last == c && indices.len() > indptr[r] => {
                        *values.last_mut().unwrap() += v;
                    }
                    _ => {
                        indices.push(c);
                        values.push(v);
                    }
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr,
            indices,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `A^T y`.
    pub fn tmatvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out[j] += v * y[i];
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[i][j] += v;
            }
        }
        d
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LuError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    /// No acceptable pivot remains in `column` at elimination step `step`.
    #[error("singular matrix: no pivot for column {column} at step {step}")]
    Singular { step: usize, column: usize },
}

#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    pivot_rows: Vec<usize>,
    pivot_cols: Vec<usize>,
    diag: Vec<f64>,
    /// Per step: (row, multiplier) eliminated by that step's pivot row.
    lower: Vec<Vec<(usize, f64)>>,
    /// Per step: off-diagonal entries of the pivot row, keyed by column.
    upper: Vec<Vec<(usize, f64)>>,
}

fn lookup(row: &[(usize, f64)], col: usize) -> Option<f64> {
    row.binary_search_by_key(&col, |e| e.0).ok().map(|k| row[k].1)
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<SparseLu, LuError> {
        if a.n_rows != a.n_cols {
            return Err(LuError::NotSquare(a.n_rows, a.n_cols));
        }
        let n = a.n_rows;
        let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale.max(f64::MIN_POSITIVE) * 1e-15;

        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| a.row(i).collect()).collect();
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut col_count = vec![0usize; n];
        for (i, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                col_rows[j].push(i);
                col_count[j] += 1;
            }
        }
        let mut row_done = vec![false; n];
        let mut col_done = vec![false; n];

        let mut lu = SparseLu {
            n,
            pivot_rows: Vec::with_capacity(n),
            pivot_cols: Vec::with_capacity(n),
            diag: Vec::with_capacity(n),
            lower: Vec::with_capacity(n),
            upper: Vec::with_capacity(n),
        };

        for step in 0..n {
            let col = (0..n)
                .filter(|&j| !col_done[j])
                .min_by_key(|&j| (col_count[j], j))
                .expect("an active column remains");

            // Live rows of this column (col_rows may hold stale or repeated rows).
            let mut candidates: Vec<(usize, f64)> = Vec::new();
            col_rows[col].sort_unstable();
            col_rows[col].dedup();
            col_rows[col].retain(|&r| !row_done[r]);
            for &r in &col_rows[col] {
                if let Some(v) = lookup(&rows[r], col) {
                    candidates.push((r, v));
                }
            }
            let col_max = candidates.iter().fold(0.0f64, |m, c| m.max(c.1.abs()));
            if col_max <= tiny {
                return Err(LuError::Singular { step, column: col });
            }
            let (pivot_row, pivot_val) = candidates
                .iter()
                .filter(|c| c.1.abs() >= PIVOT_THRESHOLD * col_max)
                .min_by(|x, y| {
                    rows[x.0]
                        .len()
                        .cmp(&rows[y.0].len())
                        .then(y.1.abs().total_cmp(&x.1.abs()))
                        .then(x.0.cmp(&y.0))
                })
                .copied()
                .expect("column maximum is admissible");

            let prow = std::mem::take(&mut rows[pivot_row]);
            row_done[pivot_row] = true;
            col_done[col] = true;
            for &(j, _) in &prow {
                col_count[j] = col_count[j].saturating_sub(1);
            }

            let mut lower = Vec::new();
            for &(r, v) in &candidates {
                if r == pivot_row {
                    continue;
                }
                let l = v / pivot_val;
                lower.push((r, l));
                let old = std::mem::take(&mut rows[r]);
                let mut merged = Vec::with_capacity(old.len() + prow.len());
                let (mut i, mut k) = (0, 0);
                while i < old.len() || k < prow.len() {
                    let ci = old.get(i).map_or(usize::MAX, |e| e.0);
                    let ck = prow.get(k).map_or(usize::MAX, |e| e.0);
                    if ci < ck {
                        if ci != col {
                            merged.push(old[i]);
                        }
                        i += 1;
                    } else if ck < ci {
                        if ck != col {
                            merged.push((ck, -l * prow[k].1));
                            col_rows[ck].push(r);
                            col_count[ck] += 1;
                        }
                        k += 1;
                    } else {
                        if ci != col {
                            merged.push((ci, old[i].1 - l * prow[k].1));
                        }
                        i += 1;
                        k += 1;
                    }
                }
                rows[r] = merged;
            }
            col_count[col] = 0;

            lu.pivot_rows.push(pivot_row);
            lu.pivot_cols.push(col);
            lu.diag.push(pivot_val);
            lu.lower.push(lower);
            lu.upper
                .push(prow.into_iter().filter(|&(j, _)| j != col).collect());
        }
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for (k, lower) in self.lower.iter().enumerate() {
            let yp = y[self.pivot_rows[k]];
            if yp != 0.0 {
                for &(r, l) in lower {
                    y[r] -= l * yp;
                }
            }
        }
        let mut x = vec![0.0; self.n];
        for k in (0..self.n).rev() {
            let mut acc = y[self.pivot_rows[k]];
            for &(j, v) in &self.upper[k] {
                acc -= v * x[j];
            }
            x[self.pivot_cols[k]] = acc / self.diag[k];
        }
        x
    }

    /// Solve followed by one step of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve(b);
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = self.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        x
    }

    /// Number of stored factor entries (fill diagnostic).
    pub fn factor_nnz(&self) -> usize {
        self.n + self.lower.iter().map(Vec::len).sum::<usize>() + self.upper.iter().map(Vec::len).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_dense(d: &[Vec<f64>]) -> CsrMatrix {
        let mut t = Triplets::new(d.len(), d[0].len());
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.to_csr()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 1, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, 4.0);
        let m = t.to_csr();
        assert_eq!(m.to_dense(), vec![vec![0.0, 3.0], vec![4.0, 0.0]]);
    }

    #[test]
    fn needs_pivoting_on_zero_diagonal() {
        // Saddle-point structure with zero (2,2) block.
        let a = from_dense(&[
            vec![2.0, 0.0, 1.0],
            vec![0.0, 3.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let lu = SparseLu::factor(&a).unwrap();
        let x = lu.solve(&[3.0, 4.0, 2.0]);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip([3.0, 4.0, 2.0]) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_detected() {
        let a = from_dense(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(SparseLu::factor(&a), Err(LuError::Singular { .. })));
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 0, 1.0);
        assert!(matches!(
            SparseLu::factor(&t.to_csr()),
            Err(LuError::Singular { column: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn solves_random_sparse_systems(
            n in 2usize..30,
            seed_entries in proptest::collection::vec((0usize..30, 0usize..30, -5.0f64..5.0), 0..120),
            rhs in proptest::collection::vec(-10.0f64..10.0, 30),
        ) {
            // Diagonally weighted so the system is nonsingular.
            let mut t = Triplets::new(n, n);
            for i in 0..n {
                t.push(i, i, 20.0 + i as f64);
            }
            for (i, j, v) in seed_entries {
                t.push(i % n, j % n, v);
            }
            let a = t.to_csr();
            let lu = SparseLu::factor(&a).unwrap();
            let x = lu.solve_refined(&a, &rhs[..n]);
            let ax = a.matvec(&x);
            for i in 0..n {
                prop_assert!((ax[i] - rhs[i]).abs() < 1e-9);
            }
        }
    }
}
