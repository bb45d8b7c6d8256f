//! Training plans and the fitting loop.

mod fit;
mod plan;

pub use fit::{
    backbone_iteration, fit, inductive_iteration, init_state, predict, score_probabilities,
    seeded_rng, self_supervised_iteration, EpochRecord, FitResult, Inference, IterationOutcome,
    Optimizers, Regime, Schedule, TrainConfig, TrainData, ValidationScore, INIT_STREAM,
};
pub use plan::{groups_from_blocks, kshot_sample, minibatch_partition, nfold_split, FoldPlan, KshotSample};
