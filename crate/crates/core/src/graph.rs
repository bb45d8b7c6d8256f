//! Feature-data bipartite graph.

use std::fmt::Write as _;

use rand::distributions::Open01;
use rand::Rng;

use crate::encode::EncodedMatrix;
use crate::error::{Error, Result};

/// Instance×feature incidence stored in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    n_features: usize,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
}

/// Per-edge keep flags in row-major edge order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    pub keep: Vec<bool>,
}

impl BipartiteGraph {
    pub fn from_matrix(x: &EncodedMatrix) -> Self {
        Self::from_sorted_rows(x.rows().to_vec(), x.n_cols())
    }

    /// Graph over arbitrary rows of feature indices (sorted and deduplicated here).
    pub fn from_rows(mut rows: Vec<Vec<usize>>, n_features: usize) -> Result<Self> {
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            if r.last().is_some_and(|&j| j >= n_features) {
                return Err(Error::shape("bipartite_graph", "feature index out of range"));
            }
        }
        Ok(Self::from_sorted_rows(rows, n_features))
    }

    fn from_sorted_rows(row_adj: Vec<Vec<usize>>, n_features: usize) -> Self {
        let mut col_adj = vec![Vec::new(); n_features];
        for (i, r) in row_adj.iter().enumerate() {
            for &j in r {
                col_adj[j].push(i);
            }
        }
        BipartiteGraph {
            n_features,
            row_adj,
            col_adj,
        }
    }

    pub fn n_instances(&self) -> usize {
        self.row_adj.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row_adj(&self) -> &[Vec<usize>] {
        &self.row_adj
    }

    pub fn col_adj(&self) -> &[Vec<usize>] {
        &self.col_adj
    }

    /// Instance degrees.
    pub fn in_degrees(&self) -> Vec<usize> {
        self.row_adj.iter().map(Vec::len).collect()
    }

    /// Feature degrees.
    pub fn out_degrees(&self) -> Vec<usize> {
        self.col_adj.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.row_adj.iter().map(Vec::len).sum()
    }

    /// Draws one uniform in (0, 1) per edge; an edge survives iff its draw exceeds `rho`.
    pub fn drop_edge_mask(&self, rho: f64, rng: &mut impl Rng) -> Result<EdgeMask> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("DropEdge threshold {rho} outside [0, 1]")));
        }
        let keep = (0..self.edge_count())
            .map(|_| rng.sample::<f64, _>(Open01) > rho)
            .collect();
        Ok(EdgeMask { keep })
    }

    pub fn apply_mask(&self, mask: &EdgeMask) -> Result<Self> {
        if mask.keep.len() != self.edge_count() {
            return Err(Error::shape("apply_mask", "mask length differs from edge count"));
        }
        let mut flags = mask.keep.iter();
        let rows = self
            .row_adj
            .iter()
            .map(|r| r.iter().copied().filter(|_| *flags.next().unwrap_or(&false)).collect())
            .collect();
        Ok(Self::from_sorted_rows(rows, self.n_features))
    }

    pub fn drop_edge(&self, rho: f64, rng: &mut impl Rng) -> Result<Self> {
        let mask = self.drop_edge_mask(rho, rng)?;
        self.apply_mask(&mask)
    }

    /// `instance<TAB>feature` per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.row_adj.iter().enumerate() {
            for j in r {
                let _ = writeln!(s, "{i}\t{j}");
            }
        }
        s
    }
}

/// Columns of `x` listed in `subset`, renumbered densely in subset order.
pub fn column_submatrix(x: &EncodedMatrix, subset: &[usize]) -> Result<EncodedMatrix> {
    let mut map = vec![None; x.n_cols()];
    for (new, &old) in subset.iter().enumerate() {
        if old >= x.n_cols() {
            return Err(Error::invalid(format!(
                "column {old} out of range for {} columns",
                x.n_cols()
            )));
        }
        if map[old].replace(new).is_some() {
            return Err(Error::invalid(format!("column {old} selected twice")));
        }
    }
    x.remap_columns(&map, subset.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> EncodedMatrix {
        EncodedMatrix::new(3, vec![vec![0, 2], vec![1, 2]], vec![0, 1]).unwrap()
    }

    #[test]
    fn degrees_by_hand() {
        let g = BipartiteGraph::from_matrix(&toy());
        assert_eq!(g.out_degrees(), vec![1, 1, 2]);
        assert_eq!(g.in_degrees(), vec![2, 2]);
        assert_eq!(g.col_adj()[2], vec![0, 1]);
    }

    #[test]
    fn drop_edge_extremes() {
        let g = BipartiteGraph::from_matrix(&toy());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(g.drop_edge(0.0, &mut rng).unwrap(), g);
        assert_eq!(g.drop_edge(1.0, &mut rng).unwrap().edge_count(), 0);
        assert!(g.drop_edge(1.5, &mut rng).is_err());
    }

    #[test]
    fn submatrix_reorders_columns() {
        let s = column_submatrix(&toy(), &[2, 0]).unwrap();
        assert_eq!(s.rows(), &[vec![0, 1], vec![0]]);
        assert!(column_submatrix(&toy(), &[3]).is_err());
        assert_eq!(column_submatrix(&toy(), &[]).unwrap().nnz(), 0);
    }
}
