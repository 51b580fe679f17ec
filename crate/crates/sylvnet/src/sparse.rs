//! Compressed sparse row matrices.
//!
//! Adjacency matrices are kept sparse end to end; they are only densified
//! inside code paths that are dense by nature (attention scores, the base
//! model's association channels). Products with dense matrices stay O(nnz * k).

use crate::Mat;
use ndarray::Array2;

/// A sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets. Duplicate
    /// coordinates are summed. Zero-valued entries are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(i, j, v) in triplets {
            assert!(i < rows && j < cols, "triplet ({i},{j}) out of {rows}x{cols}");
            if v != 0.0 {
                per_row[i].push((j, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for entries in per_row.iter_mut() {
            entries.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < entries.len() {
                let j = entries[k].0;
                let mut v = 0.0;
                while k < entries.len() && entries[k].0 == j {
                    v += entries[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows, cols, row_ptr, col_idx, values }
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

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), values: Vec::new() }
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

    /// Iterates the nonzeros of row `i` as (col, value) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// Iterates all nonzeros as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Row sums (weighted degrees for an adjacency matrix).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Returns D_r * self * D_c for diagonal scaling vectors `left` and `right`.
    pub fn scale_sym(&self, left: &[f64], right: &[f64]) -> Self {
        assert_eq!(left.len(), self.rows);
        assert_eq!(right.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] = left[i] * self.values[k] * right[self.col_idx[k]];
            }
        }
        out
    }

    /// Dense product `self * rhs`.
    pub fn mul_dense(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.nrows(), "spmm shape mismatch");
        let k = rhs.ncols();
        let mut out = Array2::zeros((self.rows, k));
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let src = rhs.row(j);
                let mut dst = out.row_mut(i);
                for c in 0..k {
                    dst[c] += v * src[c];
                }
            }
        }
        out
    }

    /// Dense product `self^T * rhs`, computed without materializing the transpose.
    pub fn transpose_mul_dense(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.nrows(), "spmm^T shape mismatch");
        let k = rhs.ncols();
        let mut out = Array2::zeros((self.cols, k));
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let src = rhs.row(i);
                let mut dst = out.row_mut(j);
                for c in 0..k {
                    dst[c] += v * src[c];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<(usize, usize, f64)> =
            self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    pub fn to_dense(&self) -> Mat {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (i, j, v) in self.iter() {
            out[[i, j]] = v;
        }
        out
    }

    /// Max absolute asymmetry |A(i,j) - A(j,i)| over all stored entries.
    /// Returns the first offending pair when the matrix is not square or the
    /// deviation exceeds `tol`.
    pub fn symmetry_violation(&self, tol: f64) -> Option<(usize, usize, f64)> {
        if self.rows != self.cols {
            return Some((0, 0, f64::INFINITY));
        }
        for (i, j, v) in self.iter() {
            let vt = self.get(j, i);
            if (v - vt).abs() > tol {
                return Some((i, j, (v - vt).abs()));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_merge_duplicates_and_drop_zeros() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, 0.0)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 2), 0.0);
    }

    #[test]
    fn mul_dense_matches_dense_product() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 3.0), (1, 1, 1.0)]);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let got = m.mul_dense(&x);
        let want = m.to_dense().dot(&x);
        assert_eq!(got, want);
    }

    #[test]
    fn transpose_mul_matches_explicit_transpose() {
        let m = CsrMatrix::from_triplets(3, 2, &[(0, 1, 2.0), (2, 0, -1.0), (1, 1, 4.0)]);
        let x = array![[1.0], [2.0], [-3.0]];
        let got = m.transpose_mul_dense(&x);
        let want = m.transpose().to_dense().dot(&x);
        assert_eq!(got, want);
    }

    #[test]
    fn symmetry_violation_detects_pair() {
        let asym = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]);
        let hit = asym.symmetry_violation(1e-12).unwrap();
        assert_eq!((hit.0, hit.1), (0, 1));
        let sym = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(sym.symmetry_violation(1e-12).is_none());
    }
}
