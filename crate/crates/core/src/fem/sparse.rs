//! Compressed sparse row storage with a mesh-derived fixed pattern.

use std::fmt::Write as _;

use crate::geometry::BuildModel;

/// Square CSR matrix. Column indices within a row are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the node-adjacency pattern of `model`.
    pub fn from_mesh(model: &BuildModel) -> Self {
        let n = model.node_count();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in model.elements() {
            for &a in tri {
                for &b in tri {
                    adj[a].push(b);
                }
            }
        }
        Self::from_adjacency(adj)
    }

    pub fn from_adjacency(mut adj: Vec<Vec<usize>>) -> Self {
        let n = adj.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self { n, row_ptr, col_idx, values }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let adj = dense
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect())
            .collect();
        let mut m = Self::from_adjacency(adj);
        for (i, row) in dense.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` at `(i, j)`.
    ///
    /// # Panics
    ///
    /// Panics if `(i, j)` is outside the sparsity pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).unwrap_or_else(|| panic!("({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    /// Scatters a dense element matrix into the global matrix.
    pub fn add_element<const N: usize>(&mut self, dofs: &[usize; N], ke: &[[f64; N]; N]) {
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                self.add(i, j, ke[a][b]);
            }
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `alpha * self + beta * other` for matrices sharing a pattern.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert!(self.same_pattern(other), "pattern mismatch");
        let mut out = self.clone();
        for (o, (a, b)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = alpha * a + beta * b;
        }
        out
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Largest absolute entry of `self - selfᵀ`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }

    /// Submatrix on rows/columns where `keep` is true, renumbered in order.
    pub fn restrict(&self, keep: &[bool]) -> (Self, Vec<usize>) {
        let mut new_index = vec![usize::MAX; self.n];
        let mut old_index = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_index[i] = old_index.len();
                old_index.push(i);
            }
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &i in &old_index {
            for (j, v) in self.row(i) {
                if keep[j] {
                    col_idx.push(new_index[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        (Self { n: old_index.len(), row_ptr, col_idx, values }, old_index)
    }

    /// Coordinate text dump, one `row col value` triple per line (0-based).
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let _ = writeln!(out, "{i} {j} {v:.17e}");
            }
        }
        out
    }
}
