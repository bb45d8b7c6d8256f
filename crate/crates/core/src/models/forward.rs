use std::rc::Rc;

use rand::Rng;

use super::config::{BackboneVariant, EmbeddingMode, Head};
use super::gnn::Propagator;
use super::state::{BoundModel, ModelState};
use crate::error::{Error, Result};
use crate::ndiff::{sigmoid, softmax_rows, BatchStats, Graph, NormMode, Tensor, Var};

/// Logits of a batch plus the batch-norm statistics gathered in training mode.
#[derive(Debug, Clone)]
pub struct Scores {
    pub logits: Var,
    pub batch_stats: Vec<Option<BatchStats>>,
}

/// Sum of embedding rows indexed by `indices`, accumulated in ascending index
/// order so any permutation of `indices` gives the same bits.
pub fn embed(indices: &[usize], embedding: &Tensor) -> Result<Vec<f64>> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut z = vec![0.0; embedding.cols()];
    for &j in &sorted {
        if j >= embedding.rows() {
            return Err(Error::shape(
                "embed",
                format!("index {j} out of range for {} rows", embedding.rows()),
            ));
        }
        for (a, b) in z.iter_mut().zip(embedding.row(j)) {
            *a += b;
        }
    }
    Ok(z)
}

/// Classifier stack on summed embeddings `z` (`n×H`).
pub fn classify(
    g: &mut Graph,
    state: &ModelState,
    bound: &BoundModel,
    z: Var,
    train: bool,
    rng: &mut impl Rng,
) -> Result<Scores> {
    let backbone = &state.config.backbone;
    let mut h = g.add_row(z, bound.embedding_bias)?;
    h = g.relu(h)?;
    let last = bound.layers.len() - 1;
    let mut batch_stats = Vec::with_capacity(bound.layers.len());
    for (k, (layer, params)) in bound.layers.iter().zip(&state.layers).enumerate() {
        h = g.matmul(h, layer.weight)?;
        h = g.add_row(h, layer.bias)?;
        if k == last {
            batch_stats.push(None);
            break;
        }
        let mut stats = None;
        if let (Some((gamma, beta)), Some(np)) = (layer.norm, &params.norm) {
            let mode = if train {
                NormMode::Train
            } else {
                NormMode::Eval {
                    mean: &np.running_mean,
                    var: &np.running_var,
                }
            };
            let (out, s) = g.batch_norm(h, gamma, beta, mode)?;
            h = out;
            stats = s;
        }
        batch_stats.push(stats);
        h = g.relu(h)?;
        h = g.dropout(h, backbone.dropout, train, rng)?;
    }
    Ok(Scores {
        logits: h,
        batch_stats,
    })
}

/// Pairwise interaction term `½(‖Σ eᵢ‖² − Σ ‖eᵢ‖²)` of each row; `n×1`.
pub fn fm_term(g: &mut Graph, embeddings: Var, rows: &[Vec<usize>]) -> Result<Var> {
    let z = g.gather_sum(embeddings, rows)?;
    let zz = g.mul(z, z)?;
    let sq_of_sum = g.sum_cols(zz)?;
    let ee = g.mul(embeddings, embeddings)?;
    let norms = g.sum_cols(ee)?;
    let sum_of_sq = g.gather_sum(norms, rows)?;
    let diff = g.sub(sq_of_sum, sum_of_sq)?;
    g.scale(diff, 0.5)
}

/// Backbone scores of `rows` given effective per-column embeddings.
///
/// `first_order` holds the DeepFM linear weight per column and is required for
/// that variant.
pub fn score_rows(
    g: &mut Graph,
    state: &ModelState,
    bound: &BoundModel,
    embeddings: Var,
    first_order: Option<Var>,
    rows: &[Vec<usize>],
    train: bool,
    rng: &mut impl Rng,
) -> Result<Scores> {
    let z = g.gather_sum(embeddings, rows)?;
    let mut scores = classify(g, state, bound, z, train, rng)?;
    if state.config.backbone.variant == BackboneVariant::DeepFm {
        let fo = first_order.ok_or_else(|| Error::shape("deepfm_score", "missing first-order weights"))?;
        let linear = g.gather_sum(fo, rows)?;
        let fm = fm_term(g, embeddings, rows)?;
        let extra = g.add(linear, fm)?;
        scores.logits = g.add(scores.logits, extra)?;
    }
    Ok(scores)
}

/// Columns of a batch as seen by the model: each column either maps to a
/// training feature (embedding row) or is unseen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureView {
    map: Rc<Vec<Option<usize>>>,
}

impl FeatureView {
    pub fn new(map: Vec<Option<usize>>) -> Self {
        FeatureView { map: Rc::new(map) }
    }

    /// Columns `0..known` are training features, `known..total` are unseen.
    pub fn prefix(known: usize, total: usize) -> Self {
        Self::new((0..total).map(|j| (j < known).then_some(j)).collect())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, column: usize) -> Option<usize> {
        self.map[column]
    }

    pub fn map(&self) -> &Rc<Vec<Option<usize>>> {
        &self.map
    }
}

/// How column embeddings are produced for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Extrapolation<'a> {
    /// Learned rows only; unseen columns embed as zero.
    None,
    /// Graph network over `propagator` with the given mode. `masked[c]` marks
    /// known columns whose initial state is zeroed as if they were unseen; an
    /// empty slice masks nothing.
    Gnn {
        propagator: &'a Propagator,
        mode: EmbeddingMode,
        masked: &'a [bool],
    },
}

/// Effective `V×H` embeddings of the view's columns.
pub fn column_embeddings(
    g: &mut Graph,
    bound: &BoundModel,
    view: &FeatureView,
    extrapolation: Extrapolation<'_>,
) -> Result<Var> {
    let raw = g.gather_rows(bound.embedding, view.map().clone())?;
    let Extrapolation::Gnn {
        propagator,
        mode,
        masked,
    } = extrapolation
    else {
        return Ok(raw);
    };
    if !masked.is_empty() && masked.len() != view.len() {
        return Err(Error::shape(
            "fate_forward",
            format!("mask of {} for {} columns", masked.len(), view.len()),
        ));
    }
    let keep: Vec<f64> = (0..view.len())
        .map(|c| {
            let hidden = masked.get(c).copied().unwrap_or(false) || view.get(c).is_none();
            if hidden {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let fill: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
    let init = g.scale_rows(raw, Rc::new(keep))?;
    let out = propagator.propagate(g, init, &bound.gnn)?;
    match mode {
        EmbeddingMode::AllUpdated => Ok(out),
        EmbeddingMode::MaskedSet => {
            let filled = g.scale_rows(out, Rc::new(fill))?;
            g.add(init, filled)
        }
    }
}

/// Full forward pass: column embeddings, then backbone scores of `rows`
/// (indices into the view's columns).
pub fn fate_forward(
    g: &mut Graph,
    state: &ModelState,
    bound: &BoundModel,
    view: &FeatureView,
    rows: &[Vec<usize>],
    extrapolation: Extrapolation<'_>,
    train: bool,
    rng: &mut impl Rng,
) -> Result<Scores> {
    let embeddings = column_embeddings(g, bound, view, extrapolation)?;
    let first_order = match bound.first_order {
        Some(fo) => Some(g.gather_rows(fo, view.map().clone())?),
        None => None,
    };
    score_rows(g, state, bound, embeddings, first_order, rows, train, rng)
}

/// Mean loss of logits against integer labels under the given head.
pub fn mean_loss(g: &mut Graph, head: Head, logits: Var, labels: &[usize]) -> Result<Var> {
    let per_row = match head {
        Head::Softmax { .. } => g.cross_entropy(logits, Rc::new(labels.to_vec()))?,
        Head::Sigmoid => {
            let y = labels.iter().map(|&l| l as f64).collect();
            g.binary_cross_entropy(logits, Rc::new(y))?
        }
    };
    let m = g.mean_rows(per_row)?;
    Ok(m)
}

/// Class probabilities: softmax rows, or `n×1` positive-class probabilities.
pub fn probabilities(head: Head, logits: &Tensor) -> Tensor {
    match head {
        Head::Softmax { .. } => softmax_rows(logits),
        Head::Sigmoid => logits.map(sigmoid),
    }
}
