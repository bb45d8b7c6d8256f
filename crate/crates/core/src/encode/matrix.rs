use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Sparse binary instance×feature matrix with per-row class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedMatrix {
    cols: usize,
    rows: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

impl EncodedMatrix {
    /// Builds a matrix; row index lists are sorted and must be duplicate-free and `< cols`.
    pub fn new(cols: usize, mut rows: Vec<Vec<usize>>, labels: Vec<usize>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::shape(
                "encoded_matrix",
                format!("{} rows, {} labels", rows.len(), labels.len()),
            ));
        }
        for (i, r) in rows.iter_mut().enumerate() {
            r.sort_unstable();
            if r.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::data(format!("row {i} repeats a feature index")));
            }
            if r.last().is_some_and(|&j| j >= cols) {
                return Err(Error::data(format!("row {i} has an index beyond {cols} columns")));
            }
        }
        Ok(EncodedMatrix { cols, rows, labels })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn select_rows(&self, indices: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            cols: self.cols,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Renames columns through `map` (old index → new index), dropping unmapped
    /// entries. `map.len()` must equal the current column count.
    pub fn remap_columns(&self, map: &[Option<usize>], new_cols: usize) -> Result<EncodedMatrix> {
        if map.len() != self.cols {
            return Err(Error::shape(
                "remap_columns",
                format!("map of {} for {} columns", map.len(), self.cols),
            ));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().filter_map(|&j| map[j]).collect())
            .collect();
        EncodedMatrix::new(new_cols, rows, self.labels.clone())
    }

    /// Same rows with the column count widened (new columns empty).
    pub fn with_cols(&self, cols: usize) -> Result<EncodedMatrix> {
        EncodedMatrix::new(cols, self.rows.clone(), self.labels.clone())
    }

    /// Checks the one-hot block structure: one index per block range, in every row.
    pub fn validate_blocks(&self, blocks: &[std::ops::Range<usize>]) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            for b in blocks {
                let n = r.iter().filter(|j| b.contains(j)).count();
                if n != 1 {
                    return Err(Error::data(format!(
                        "row {i} has {n} indices in block {}..{}",
                        b.start, b.end
                    )));
                }
            }
            if r.len() != blocks.len() {
                return Err(Error::data(format!("row {i} has indices outside every block")));
            }
        }
        Ok(())
    }

    /// Text form: a header line, then `label<TAB>space-separated indices` per row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# featx-encoded v1 rows={} cols={}", self.rows.len(), self.cols);
        for (r, l) in self.rows.iter().zip(&self.labels) {
            let idx: Vec<String> = r.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{l}\t{}", idx.join(" "));
        }
        s
    }
}
