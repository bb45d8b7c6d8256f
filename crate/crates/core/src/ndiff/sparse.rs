use super::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix with explicit weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Binary matrix whose row `i` has ones at `rows[i]`.
    pub fn binary<R: AsRef<[usize]>>(rows: &[R], cols: usize) -> Result<Self> {
        Self::weighted(rows, cols, |_, _| 1.0)
    }

    /// Matrix with the sparsity pattern of `rows` and entry `(i, j)` set to `weight(i, j)`.
    pub fn weighted<R: AsRef<[usize]>>(
        rows: &[R],
        cols: usize,
        mut weight: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(|r| r.as_ref().len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for (i, r) in rows.iter().enumerate() {
            for &j in r.as_ref() {
                if j >= cols {
                    return Err(Error::shape(
                        "csr",
                        format!("column {j} out of range for {cols} columns"),
                    ));
                }
                indices.push(j);
                values.push(weight(i, j));
            }
            indptr.push(indices.len());
        }
        Ok(Csr {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and weights of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let cur = t.get(i, j);
                t.set(i, j, cur + v);
            }
        }
        t
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.cols != dense.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} x {:?}", self.rows, self.cols, dense.shape()),
            ));
        }
        let h = dense.cols();
        let mut out = Tensor::zeros(self.rows, h);
        for i in 0..self.rows {
            let out_row = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out_row.iter_mut().zip(dense.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`.
    pub fn t_mul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.rows != dense.rows() {
            return Err(Error::shape(
                "spmm_t",
                format!("({}x{})ᵀ x {:?}", self.rows, self.cols, dense.shape()),
            ));
        }
        let h = dense.cols();
        let mut out = Tensor::zeros(self.cols, h);
        for i in 0..self.rows {
            let src = dense.row(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out.row_mut(j).iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}
