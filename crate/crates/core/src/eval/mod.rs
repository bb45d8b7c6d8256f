//! Metrics, split protocols and validation-based selection.

mod metrics;
mod select;
mod split;

pub use metrics::{accuracy, logloss, predicted_classes, roc_auc, PROB_CLIP};
pub use select::{select_model, SelectionPolicy};
pub use split::{
    new_features, split_chronological, split_random, ChronologicalSplit, Protocol, RandomSplit,
    SplitSpec,
};
