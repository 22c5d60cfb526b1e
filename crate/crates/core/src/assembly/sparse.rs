use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};

/// Compressed-row sparse matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds the matrix from `(row, col, value)` triplets, summing duplicates
    /// in insertion order.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                d[(i, j)] = x;
            }
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                t.push((j, i, x));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, t)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).all(|(&j, &x)| self.get(j, i) == x)
        })
    }

    /// Sum `sum_k coef_k * A_k` over matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let Some((_, first)) = terms.first() else {
            return Err(Error::InvalidArgument("empty linear combination".into()));
        };
        let (rows, cols) = (first.rows, first.cols);
        let mut t = Vec::new();
        for (coef, m) in terms {
            if m.rows != rows || m.cols != cols {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} vs {}x{}",
                    m.rows, m.cols, rows, cols
                )));
            }
            for i in 0..rows {
                let (c, v) = m.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    t.push((i, j, coef * x));
                }
            }
        }
        Ok(SparseMatrix::from_triplets(rows, cols, t))
    }

    /// Keeps the listed columns, renumbered in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> SparseMatrix {
        let mut map = vec![usize::MAX; self.cols];
        for (new, &old) in columns.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Vec::new();
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if map[j] != usize::MAX {
                    t.push((i, map[j], x));
                }
            }
        }
        SparseMatrix::from_triplets(self.rows, columns.len(), t)
    }

    /// Keeps the listed rows, renumbered in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut t = Vec::new();
        for (new, &old) in rows.iter().enumerate() {
            let (c, v) = self.row(old);
            for (&j, &x) in c.iter().zip(v) {
                t.push((new, j, x));
            }
        }
        SparseMatrix::from_triplets(rows.len(), self.cols, t)
    }

    /// `y = A x`, booking `2 nnz` flops to `phase`.
    pub fn mul_vec(&self, x: &[f64], counter: Option<(&FlopCounter, Phase)>) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "sparse matvec dimension mismatch");
        let y = (0..self.rows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect();
        if let Some((fc, p)) = counter {
            fc.add(p, 2 * self.nnz() as u64);
        }
        y
    }

    /// `y = A^T x`, booking `2 nnz` flops to `phase`.
    pub fn mul_transpose_vec(&self, x: &[f64], counter: Option<(&FlopCounter, Phase)>) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "sparse transpose matvec dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += a * xi;
            }
        }
        if let Some((fc, p)) = counter {
            fc.add(p, 2 * self.nnz() as u64);
        }
        y
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.rows)
            .map(|i| self.row_ptr[i + 1] - self.row_ptr[i])
            .max()
            .unwrap_or(0)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.rows {
            let (c, _) = self.row(i);
            for &j in c {
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 4.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 5.0);
        assert_eq!(m.row(1).0, &[0, 2]);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let m = SparseMatrix::from_triplets(3, 2, vec![(0, 0, 1.0), (1, 1, -2.0), (2, 0, 0.5), (2, 1, 4.0)]);
        let d = m.to_dense();
        let x = [1.5, -0.5];
        let y = m.mul_vec(&x, None);
        let yd = &d * nalgebra::DVector::from_row_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-15);
        }
        let z = [1.0, 2.0, 3.0];
        let w = m.mul_transpose_vec(&z, None);
        let wd = d.transpose() * nalgebra::DVector::from_row_slice(&z);
        for i in 0..2 {
            assert!((w[i] - wd[i]).abs() < 1e-15);
        }
        assert_eq!(m.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn linear_combination_unions_patterns() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]);
        let b = SparseMatrix::from_triplets(2, 2, vec![(1, 1, 1.0), (0, 0, 1.0)]);
        let c = SparseMatrix::linear_combination(&[(1.0, &a), (0.5, &b)]).unwrap();
        assert_eq!(c.get(0, 0), 1.5);
        assert_eq!(c.get(1, 1), 0.5);
        let bad = SparseMatrix::zeros(3, 2);
        assert!(SparseMatrix::linear_combination(&[(1.0, &a), (1.0, &bad)]).is_err());
    }

    #[test]
    fn flops_are_booked() {
        let fc = FlopCounter::new();
        let m = SparseMatrix::identity(4);
        m.mul_vec(&[1.0; 4], Some((&fc, Phase::MatvecSparse)));
        assert_eq!(fc.get(Phase::MatvecSparse), 8);
    }
}
