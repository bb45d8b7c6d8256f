use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Plain gradient descent: `p ← p − lr·g` for every parameter.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], learning_rate: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (v, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *v -= learning_rate * d;
        }
    }
    Ok(())
}

fn check_shapes(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "optimizer",
            format!("{} parameters, {} gradients", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        p.expect_same_shape(g, "optimizer")?;
    }
    Ok(())
}

/// Update rule applied to a parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Stateful optimizer over a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        first: Vec<Tensor>,
        second: Vec<Tensor>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                first: Vec::new(),
                second: Vec::new(),
            },
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => *lr,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                first,
                second,
            } => {
                check_shapes(params, grads)?;
                if first.is_empty() {
                    *first = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
                    *second = first.clone();
                }
                if first.len() != grads.len() {
                    return Err(Error::shape("adam", "parameter list changed between steps"));
                }
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step as i32);
                let c2 = 1.0 - beta2.powi(*step as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(first).zip(second) {
                    let ps = p.as_mut_slice();
                    let ms = m.as_mut_slice();
                    let vs = v.as_mut_slice();
                    for (e, &d) in g.as_slice().iter().enumerate() {
                        ms[e] = *beta1 * ms[e] + (1.0 - *beta1) * d;
                        vs[e] = *beta2 * vs[e] + (1.0 - *beta2) * d * d;
                        let mhat = ms[e] / c1;
                        let vhat = vs[e] / c2;
                        ps[e] -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
                Ok(())
            }
        }
    }
}
