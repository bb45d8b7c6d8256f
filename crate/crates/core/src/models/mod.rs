//! Backbone classifier, propagation network and their composition.

mod checkpoint;
mod concat;
mod config;
mod forward;
mod gnn;
mod state;

pub use checkpoint::Checkpoint;
pub use concat::concat_equivalence_witness;
pub use config::{
    BackboneConfig, BackboneVariant, EmbeddingMode, GnnConfig, GnnFlavor, Head, ModelConfig,
    Normalization,
};
pub use forward::{
    classify, column_embeddings, embed, fate_forward, fm_term, mean_loss, probabilities,
    score_rows, Extrapolation, FeatureView, Scores,
};
pub use gnn::{Hop, Propagator};
pub use state::{BoundDense, BoundModel, Dense, ModelState, NormParams, BN_MOMENTUM};
