//! Heuristic extrapolation rules for unseen features.
//!
//! Every rule takes a matrix whose columns `0..D_obs` are the observed
//! features (one embedding row each in `W_obs`) and whose remaining columns are
//! new, and returns one embedding row per new column.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encode::EncodedMatrix;
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::models::{GnnConfig, GnnFlavor, Normalization, Propagator};
use crate::ndiff::Tensor;

/// Fraction of most similar observed features averaged by the KNN rule.
pub const KNN_TOP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Observed features only.
    Base,
    /// Trained and tested with every feature.
    Oracle,
    /// Observed features first, then continued training on the unobserved ones.
    Inl,
    Average,
    Pooling,
    Knn,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Base,
        BaselineKind::Oracle,
        BaselineKind::Inl,
        BaselineKind::Average,
        BaselineKind::Pooling,
        BaselineKind::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Base => "base",
            BaselineKind::Oracle => "oracle",
            BaselineKind::Inl => "inl",
            BaselineKind::Average => "average",
            BaselineKind::Pooling => "pooling",
            BaselineKind::Knn => "knn",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown baseline `{s}`")))
    }
}

/// Every new feature gets the mean observed embedding.
pub fn average_extrapolate(observed: &Tensor, new_count: usize) -> Result<Tensor> {
    if observed.rows() == 0 {
        return Err(Error::invalid("average extrapolation needs an observed feature"));
    }
    let h = observed.cols();
    let mut mean = vec![0.0; h];
    for r in 0..observed.rows() {
        for (m, v) in mean.iter_mut().zip(observed.row(r)) {
            *m += v;
        }
    }
    let n = observed.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let data = (0..new_count).flat_map(|_| mean.iter().copied()).collect();
    Tensor::from_vec(new_count, h, data)
}

fn check_layout(x: &EncodedMatrix, observed: &Tensor) -> Result<usize> {
    let known = observed.rows();
    if known > x.n_cols() {
        return Err(Error::shape(
            "extrapolate",
            format!("{known} observed rows for a matrix of {} columns", x.n_cols()),
        ));
    }
    Ok(known)
}

fn mean_pool_config(width: usize) -> GnnConfig {
    GnnConfig {
        layers: 2,
        flavor: GnnFlavor::Gcn,
        width,
        self_loop: false,
        normalization: Normalization::Mean,
    }
}

/// Two-hop mean pooling: each instance averages its observed features'
/// embeddings, each new feature averages its instances. Empty means are zero.
pub fn pooling_extrapolate(x: &EncodedMatrix, observed: &Tensor) -> Result<Tensor> {
    let known = check_layout(x, observed)?;
    let config = mean_pool_config(observed.cols());
    let observed_rows: Vec<Vec<usize>> = x
        .rows()
        .iter()
        .map(|r| r.iter().copied().filter(|&j| j < known).collect())
        .collect();
    let observed_graph = BipartiteGraph::from_rows(observed_rows, known)?;
    let instances = Propagator::new(&observed_graph, &config)?
        .to_instances
        .agg
        .mul_dense(observed)?;
    let features = Propagator::new(&BipartiteGraph::from_matrix(x), &config)?
        .to_features
        .agg
        .mul_dense(&instances)?;
    let new: Vec<usize> = (known..x.n_cols()).collect();
    Ok(features.select_rows(&new))
}

/// `|A ∩ B| / |A ∪ B|` of two sorted index sets; zero when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    if union == 0 {
        0.0
    } else {
        common as f64 / union as f64
    }
}

/// Number of neighbours averaged for `observed` candidates: `⌈fraction·observed⌉`, at least one.
pub fn knn_neighbours(observed: usize, top_fraction: f64) -> usize {
    (((top_fraction * observed as f64) - 1e-9).ceil() as usize).clamp(1, observed.max(1))
}

/// Each new feature averages the observed embeddings whose instance sets are
/// most Jaccard-similar to its own; ties go to the lower feature index.
pub fn knn_extrapolate(x: &EncodedMatrix, observed: &Tensor, top_fraction: f64) -> Result<Tensor> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::invalid(format!("KNN top fraction {top_fraction} outside (0, 1]")));
    }
    let known = check_layout(x, observed)?;
    if known == 0 {
        return Err(Error::invalid("KNN extrapolation needs an observed feature"));
    }
    let graph = BipartiteGraph::from_matrix(x);
    let columns = graph.col_adj();
    let top = knn_neighbours(known, top_fraction);
    let h = observed.cols();
    let mut data = Vec::with_capacity((x.n_cols() - known) * h);
    for column in &columns[known..] {
        let mut scored: Vec<(f64, usize)> = (0..known).map(|o| (jaccard(column, &columns[o]), o)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut mean = vec![0.0; h];
        for &(_, o) in &scored[..top] {
            for (m, v) in mean.iter_mut().zip(observed.row(o)) {
                *m += v;
            }
        }
        data.extend(mean.into_iter().map(|m| m / top as f64));
    }
    Tensor::from_vec(x.n_cols() - known, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: usize, rows: &[&[usize]]) -> EncodedMatrix {
        EncodedMatrix::new(cols, rows.iter().map(|r| r.to_vec()).collect(), vec![0; rows.len()]).unwrap()
    }

    #[test]
    fn average_rules() {
        let w = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let out = average_extrapolate(&w, 3).unwrap();
        assert!((0..3).all(|r| out.row(r) == [1.0, -2.0]));
        let w = Tensor::from_rows(&[[1.0, -2.0], [-1.0, 2.0]]).unwrap();
        assert_eq!(average_extrapolate(&w, 1).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(average_extrapolate(&Tensor::zeros(0, 2), 1).is_err());
    }

    #[test]
    fn pooling_single_companion() {
        // Feature 2 is new and always co-occurs with feature 1 only.
        let x = matrix(4, &[&[0, 1], &[1, 2], &[1, 2], &[0]]);
        let w = Tensor::from_rows(&[[1.0, 0.0], [0.0, 3.0]]).unwrap();
        let out = pooling_extrapolate(&x, &w).unwrap();
        assert_eq!(out.row(0), &[0.0, 3.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3]), 0.0);
        assert_eq!(jaccard(&[], &[]), 0.0);
        assert_eq!(jaccard(&[0, 1, 2], &[1, 2, 5]), 0.5);
    }

    #[test]
    fn neighbour_counts() {
        assert_eq!(knn_neighbours(10, 0.2), 2);
        assert_eq!(knn_neighbours(3, 0.2), 1);
        assert_eq!(knn_neighbours(11, 0.2), 3);
        assert_eq!(knn_neighbours(4, 1.0), 4);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("fate".parse::<BaselineKind>().is_err());
    }
}
