//! Raw tables to multi-hot feature indices.

mod matrix;
mod schema;
mod table;
mod vocab;

pub use matrix::EncodedMatrix;
pub use schema::{ColumnKind, ColumnSpec, RawSchema, DEFAULT_BUCKETS};
pub use table::RawTable;
pub use vocab::{
    build_vocabulary, build_vocabulary_with, discretize_continuous, group_rare_features,
    BlockKind, ContinuousStats, FeatureExpansion, FeatureVocabulary, RemapTable, VocabBlock,
    VocabularyOptions, RARE_LABEL,
};

