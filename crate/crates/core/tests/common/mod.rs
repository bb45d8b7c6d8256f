#![allow(dead_code)]

use featx::encode::EncodedMatrix;
use featx::models::{BackboneConfig, BackboneVariant, GnnConfig, GnnFlavor, Head, ModelConfig, ModelState, Normalization};
use featx::ndiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Random one-hot matrix with `blocks` raw features of the given cardinality.
pub fn one_hot_matrix(rows: usize, blocks: usize, cardinality: usize, classes: usize, rng: &mut impl Rng) -> EncodedMatrix {
    let data = (0..rows)
        .map(|_| (0..blocks).map(|m| m * cardinality + rng.gen_range(0..cardinality)).collect())
        .collect();
    let labels = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    EncodedMatrix::new(blocks * cardinality, data, labels).unwrap()
}

pub fn toy_config(features: usize, classes: usize, flavor: GnnFlavor, batch_norm: bool) -> ModelConfig {
    ModelConfig {
        features,
        backbone: BackboneConfig {
            hidden: vec![4, 5],
            head: Head::for_classes(classes),
            variant: BackboneVariant::Plain,
            batch_norm,
            dropout: 0.0,
        },
        gnn: GnnConfig {
            layers: 2,
            flavor,
            width: 4,
            self_loop: true,
            normalization: Normalization::Mean,
        },
    }
}

pub fn toy_state(config: ModelConfig, seed: u64) -> ModelState {
    ModelState::new(config, &mut rng(seed)).unwrap()
}

/// Accuracy by direct counting: argmax per row, or `p > 0.5` for one column.
pub fn direct_accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let mut hits = 0;
    for (r, &l) in labels.iter().enumerate() {
        let row = probs.row(r);
        let best = if row.len() == 1 {
            usize::from(row[0] > 0.5)
        } else {
            (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b })
        };
        hits += usize::from(best == l);
    }
    hits as f64 / labels.len() as f64
}
