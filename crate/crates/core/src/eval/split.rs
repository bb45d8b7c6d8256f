use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Random,
    Chronological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub protocol: Protocol,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub observed_ratio: f64,
    pub fold_count: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            protocol: Protocol::Random,
            fractions: [0.6, 0.2, 0.2],
            observed_ratio: 1.0,
            fold_count: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        if (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        if !(self.observed_ratio > 0.0 && self.observed_ratio <= 1.0) {
            return Err(Error::invalid("observed ratio must lie in (0, 1]"));
        }
        if self.fold_count == 0 {
            return Err(Error::invalid("fold count must be positive"));
        }
        Ok(())
    }
}

/// Row partition plus the observed/unobserved feature partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Sorted observed feature indices.
    pub observed: Vec<usize>,
    /// Sorted unobserved feature indices.
    pub unobserved: Vec<usize>,
}

/// `⌊x⌋` tolerant of representation error just below an integer.
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

/// Shuffled rows: train gets `⌊f₀N⌋`, validation `⌊f₁N⌋`, test the rest;
/// `⌊r·D⌋` shuffled features are observed.
pub fn split_random(n_rows: usize, n_features: usize, spec: &SplitSpec) -> Result<RandomSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows: Vec<usize> = (0..n_rows).collect();
    rows.shuffle(&mut rng);
    let n_train = floor_count(spec.fractions[0] * n_rows as f64);
    let n_val = floor_count(spec.fractions[1] * n_rows as f64);
    if n_train == 0 || n_val == 0 || n_train + n_val >= n_rows {
        return Err(Error::data(format!("{n_rows} rows leave an empty split")));
    }
    let test = rows.split_off(n_train + n_val);
    let val = rows.split_off(n_train);
    let train = rows;
    let mut features: Vec<usize> = (0..n_features).collect();
    features.shuffle(&mut rng);
    let n_obs = floor_count(spec.observed_ratio * n_features as f64);
    if n_obs == 0 {
        return Err(Error::data("observed ratio leaves no observed features"));
    }
    let mut unobserved = features.split_off(n_obs);
    let mut observed = features;
    observed.sort_unstable();
    unobserved.sort_unstable();
    Ok(RandomSplit {
        train,
        val,
        test,
        observed,
        unobserved,
    })
}

/// Contiguous folds in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChronologicalSplit {
    pub folds: Vec<Range<usize>>,
}

impl ChronologicalSplit {
    pub fn train(&self) -> Range<usize> {
        self.folds[0].clone()
    }

    pub fn val(&self) -> Range<usize> {
        self.folds[1].clone()
    }

    /// Folds 3 onward.
    pub fn tests(&self) -> &[Range<usize>] {
        &self.folds[2..]
    }
}

/// Equal folds of `⌊N/fold_count⌋` rows; the last absorbs the remainder.
pub fn split_chronological(n_rows: usize, fold_count: usize) -> Result<ChronologicalSplit> {
    if fold_count < 3 {
        return Err(Error::invalid("chronological split needs at least three folds"));
    }
    if n_rows < fold_count {
        return Err(Error::data(format!("{n_rows} rows cannot fill {fold_count} folds")));
    }
    let size = n_rows / fold_count;
    let folds = (0..fold_count)
        .map(|k| {
            let end = if k + 1 == fold_count { n_rows } else { (k + 1) * size };
            k * size..end
        })
        .collect();
    Ok(ChronologicalSplit { folds })
}

/// Features occurring in `rows` but nowhere in `reference`.
pub fn new_features<R: AsRef<[usize]>>(reference: &[R], rows: &[R]) -> BTreeSet<usize> {
    let seen: BTreeSet<usize> = reference.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
    rows.iter()
        .flat_map(|r| r.as_ref().iter().copied())
        .filter(|j| !seen.contains(j))
        .collect()
}
