//! Compressed sparse row storage for adjacency matrices and their powers.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Real matrix in compressed sparse row layout.
///
/// Column indices are strictly increasing within each row and every stored
/// value is finite. Explicit zeros may be stored but are never produced by
/// the constructors in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Repeated
    /// coordinates are summed; entries that sum to exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::shape(
                    "from_triplets",
                    format!("entry ({i},{j}) outside {n_rows}x{n_cols}"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sparse entry ({i},{j}) = {v}")));
            }
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == j {
                    acc += row[k].1;
                    k += 1;
                }
                if acc != 0.0 {
                    indices.push(j);
                    values.push(acc);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Converts a dense matrix, keeping only non-zero entries.
    pub fn from_dense(m: ArrayView2<'_, f64>) -> Self {
        let (n_rows, n_cols) = m.dim();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn row_sums(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n_rows).map(|i| self.row(i).1.iter().sum()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && self
                .iter()
                .all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (i, j, v) in self.iter() {
            let slot = next[j];
            indices[slot] = i;
            values[slot] = v;
            next[j] += 1;
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (i, j, v) in self.iter() {
            out[[i, j]] = v;
        }
        out
    }

    /// Applies `f` to every stored value, dropping results equal to zero.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> CsrMatrix {
        let triplets: Vec<_> = self.iter().map(|(i, j, v)| (i, j, f(i, j, v))).collect();
        let mut out = CsrMatrix::zeros(self.n_rows, self.n_cols);
        out.indptr.clear();
        out.indptr.push(0);
        let mut k = 0;
        for i in 0..self.n_rows {
            while k < triplets.len() && triplets[k].0 == i {
                let (_, j, v) = triplets[k];
                if v != 0.0 {
                    out.indices.push(j);
                    out.values.push(v);
                }
                k += 1;
            }
            out.indptr.push(out.indices.len());
        }
        out
    }

    /// `self + alpha * I`.
    pub fn add_scaled_identity(&self, alpha: f64) -> Result<CsrMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::shape(
                "add_identity",
                format!("matrix is {}x{}", self.n_rows, self.n_cols),
            ));
        }
        let diag = (0..self.n_rows).map(|i| (i, i, alpha));
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, self.iter().chain(diag))
    }

    /// Sparse-sparse product (Gustavson's row-by-row algorithm).
    ///
    /// When `budget` is given and the product would store more non-zeros than
    /// the budget, the accumulation stops early and `None` is returned.
    pub fn matmul_budgeted(&self, rhs: &CsrMatrix, budget: Option<usize>) -> Result<Option<CsrMatrix>> {
        if self.n_cols != rhs.n_rows {
            return Err(Error::shape(
                "spgemm",
                format!(
                    "{}x{} times {}x{}",
                    self.n_rows, self.n_cols, rhs.n_rows, rhs.n_cols
                ),
            ));
        }
        let mut acc = vec![0.0; rhs.n_cols];
        let mut marker = vec![usize::MAX; rhs.n_cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.n_rows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(k);
                for (&j, &b) in rcols.iter().zip(rvals) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    indices.push(j);
                    values.push(acc[j]);
                }
            }
            if let Some(b) = budget {
                if indices.len() > b {
                    return Ok(None);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Some(CsrMatrix {
            n_rows: self.n_rows,
            n_cols: rhs.n_cols,
            indptr,
            indices,
            values,
        }))
    }

    pub fn matmul(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        Ok(self
            .matmul_budgeted(rhs, None)?
            .expect("unbudgeted product always completes"))
    }

    /// Sparse times dense.
    pub fn mul_dense(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.n_cols != rhs.nrows() {
            return Err(Error::shape(
                "spmm",
                format!(
                    "{}x{} times {}x{}",
                    self.n_rows,
                    self.n_cols,
                    rhs.nrows(),
                    rhs.ncols()
                ),
            ));
        }
        let mut out = Array2::zeros((self.n_rows, rhs.ncols()));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut out_row = out.row_mut(i);
            for (&k, &a) in cols.iter().zip(vals) {
                out_row.scaled_add(a, &rhs.row(k));
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn transpose_mul_dense(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.n_rows != rhs.nrows() {
            return Err(Error::shape(
                "spmm_t",
                format!(
                    "({}x{})^T times {}x{}",
                    self.n_rows,
                    self.n_cols,
                    rhs.nrows(),
                    rhs.ncols()
                ),
            ));
        }
        let mut out = Array2::zeros((self.n_cols, rhs.ncols()));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let src = rhs.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                out.row_mut(k).scaled_add(a, &src);
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    pub fn frobenius_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(m.row(0), (&[0usize, 2][..], &[2.0, 1.5][..]));
        assert_eq!(m.nnz(), 2);
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
        assert!(CsrMatrix::from_triplets(2, 2, [(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn spgemm_matches_dense() {
        let a = path3();
        let a2 = a.matmul(&a).unwrap();
        assert_eq!(a2.to_dense(), array![[1.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 0.0, 1.0]]);
        assert!(a.matmul_budgeted(&a, Some(3)).unwrap().is_none());
    }

    #[test]
    fn transpose_and_spmm() {
        let m = CsrMatrix::from_triplets(2, 3, [(0, 1, 2.0), (1, 2, 3.0)]).unwrap();
        let t = m.transpose();
        assert_eq!(t.to_dense(), m.to_dense().t().to_owned());
        let d = array![[1.0, 1.0], [2.0, 0.0], [0.0, 4.0]];
        assert_eq!(m.mul_dense(d.view()).unwrap(), m.to_dense().dot(&d));
        let e = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(m.transpose_mul_dense(e.view()).unwrap(), m.to_dense().t().dot(&e));
        assert!(m.mul_dense(array![[1.0]].view()).is_err());
    }

    #[test]
    fn identity_shift() {
        let m = path3().add_scaled_identity(1.0).unwrap();
        assert_eq!(m.row_sums().to_vec(), vec![2.0, 3.0, 2.0]);
        assert!(m.is_symmetric(0.0));
    }
}
