use std::ops::Range;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

/// Disjoint feature folds covering a feature set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

/// Shuffles `features` and cuts them into `n` folds whose sizes differ by at most one.
pub fn nfold_split(features: &[usize], n: usize, rng: &mut impl Rng) -> Result<FoldPlan> {
    if n == 0 || n > features.len() {
        return Err(Error::invalid(format!(
            "cannot split {} features into {n} folds",
            features.len()
        )));
    }
    let mut shuffled = features.to_vec();
    shuffled.shuffle(rng);
    let base = shuffled.len() / n;
    let extra = shuffled.len() % n;
    let mut folds = Vec::with_capacity(n);
    let mut rest = shuffled.as_slice();
    for k in 0..n {
        let size = base + usize::from(k < extra);
        let (head, tail) = rest.split_at(size);
        folds.push(head.to_vec());
        rest = tail;
    }
    Ok(FoldPlan { folds })
}

/// Raw features drawn for one inductive update and the features they induce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KshotSample {
    /// Sorted raw feature indices.
    pub raws: Vec<usize>,
    /// Sorted union of the sampled raw features' feature indices.
    pub features: Vec<usize>,
}

/// Samples `k` of the raw features uniformly without replacement.
/// `groups[m]` lists the feature indices of raw feature `m`.
pub fn kshot_sample(groups: &[Vec<usize>], k: usize, rng: &mut impl Rng) -> Result<KshotSample> {
    if k == 0 || k > groups.len() {
        return Err(Error::invalid(format!(
            "cannot sample {k} of {} raw features",
            groups.len()
        )));
    }
    let mut raws = index::sample(rng, groups.len(), k).into_vec();
    raws.sort_unstable();
    let mut features: Vec<usize> = raws.iter().flat_map(|&m| groups[m].iter().copied()).collect();
    features.sort_unstable();
    Ok(KshotSample { raws, features })
}

/// Feature groups of contiguous block ranges.
pub fn groups_from_blocks(blocks: &[Range<usize>]) -> Vec<Vec<usize>> {
    blocks.iter().map(|b| b.clone().collect()).collect()
}

/// Shuffled rows cut into batches of `batch_size`; only the last may be smaller.
pub fn minibatch_partition(n_rows: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rows: Vec<usize> = (0..n_rows).collect();
    rows.shuffle(rng);
    Ok(rows.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_sum_of_sample() {
        let groups = groups_from_blocks(&[0..2, 2..5, 5..9]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = kshot_sample(&groups, 2, &mut rng).unwrap();
            let want: usize = s.raws.iter().map(|&m| groups[m].len()).sum();
            assert_eq!(s.features.len(), want);
        }
        let all = kshot_sample(&groups, 3, &mut rng).unwrap();
        assert_eq!(all.features, (0..9).collect::<Vec<_>>());
        assert!(kshot_sample(&groups, 4, &mut rng).is_err());
    }

    #[test]
    fn batch_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = minibatch_partition(10, 3, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(minibatch_partition(4, 9, &mut rng).unwrap().len(), 1);
    }
}
