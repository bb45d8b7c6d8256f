use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    MinLogloss,
    MaxAuc,
}

impl SelectionPolicy {
    /// Whether `candidate` strictly improves on `best`.
    pub fn improves(&self, candidate: f64, best: f64) -> bool {
        match self {
            SelectionPolicy::MinLogloss => candidate < best,
            SelectionPolicy::MaxAuc => candidate > best,
        }
    }
}

/// Index of the earliest optimum of a validation sequence.
pub fn select_model(values: &[f64], policy: SelectionPolicy) -> Result<usize> {
    let (first, rest) = values
        .split_first()
        .ok_or_else(|| Error::invalid("model selection over an empty log"))?;
    let mut best = (0, *first);
    for (i, &v) in rest.iter().enumerate() {
        if policy.improves(v, best.1) {
            best = (i + 1, v);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earliest_optimum() {
        assert_eq!(select_model(&[0.9, 0.5, 0.5, 0.7], SelectionPolicy::MinLogloss).unwrap(), 1);
        assert_eq!(select_model(&[0.4], SelectionPolicy::MaxAuc).unwrap(), 0);
        assert_eq!(select_model(&[0.6, 0.7, 0.7], SelectionPolicy::MaxAuc).unwrap(), 1);
        assert!(select_model(&[], SelectionPolicy::MaxAuc).is_err());
    }
}
