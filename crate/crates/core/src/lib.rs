//! Open-world feature extrapolation for tabular classifiers.
//!
//! A backbone network embeds multi-hot rows by summing feature embeddings. A
//! linear graph network over the feature-data bipartite graph produces
//! embeddings for features that were never seen in training.

pub mod error;
pub mod encode;
pub mod eval;
pub mod graph;
pub mod models;
pub mod ndiff;
pub mod train;
pub mod baselines;
pub mod experiment;
pub mod stability;

pub use error::{Error, ErrorClass, Result};
