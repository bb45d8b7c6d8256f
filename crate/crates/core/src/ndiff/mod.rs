//! Dense tensors, sparse products and a reverse-mode tape.

mod check;
mod optim;
mod sparse;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport, ZERO_SCALE};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
pub use sparse::Csr;
pub use tape::{sigmoid, BatchStats, Graph, NormMode, Var, BN_EPS};
pub use tensor::Tensor;

pub(crate) use tape::softmax_rows;
