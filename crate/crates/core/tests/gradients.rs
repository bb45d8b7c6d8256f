//! Finite-difference checks of every tape primitive and of the full forward loss.

mod common;

use std::rc::Rc;

use common::{one_hot_matrix, random_tensor, rng, toy_config, toy_state};
use featx::graph::BipartiteGraph;
use featx::models::{fate_forward, mean_loss, EmbeddingMode, Extrapolation, FeatureView, GnnFlavor, Propagator};
use featx::ndiff::{grad_check, Csr, Graph, NormMode, Tensor, Var};
use featx::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Contracts a matrix output with fixed random weights so every entry matters.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(out).shape();
    let w = g.constant(random_tensor(r, c, &mut rng(seed)));
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

fn check(name: &str, point: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let report = grad_check(|g, v| { let out = f(g, v)?; weighted_sum(g, out, 99) }, &point, STEP, TOL).unwrap();
    assert!(report.passed, "{name}: relative errors {:?}", report.per_input);
}

fn t(rows: usize, cols: usize, seed: u64) -> Tensor {
    random_tensor(rows, cols, &mut rng(seed))
}

#[test]
fn binary_primitives() {
    check("matmul", vec![t(3, 4, 1), t(4, 2, 2)], |g, v| g.matmul(v[0], v[1]));
    check("add", vec![t(3, 4, 1), t(3, 4, 2)], |g, v| g.add(v[0], v[1]));
    check("sub", vec![t(3, 4, 1), t(3, 4, 2)], |g, v| g.sub(v[0], v[1]));
    check("mul", vec![t(3, 4, 1), t(3, 4, 2)], |g, v| g.mul(v[0], v[1]));
    check("add_row", vec![t(3, 4, 1), t(1, 4, 2)], |g, v| g.add_row(v[0], v[1]));
}

#[test]
fn unary_primitives() {
    check("scale", vec![t(3, 4, 3)], |g, v| g.scale(v[0], -1.7));
    check("relu", vec![t(3, 4, 3)], |g, v| g.relu(v[0]));
    check("sigmoid", vec![t(3, 4, 3)], |g, v| g.sigmoid(v[0]));
    check("softmax", vec![t(3, 4, 3)], |g, v| g.softmax(v[0]));
    check("mean_rows", vec![t(3, 4, 3)], |g, v| g.mean_rows(v[0]));
    check("sum_all", vec![t(3, 4, 3)], |g, v| g.sum_all(v[0]));
    check("sum_cols", vec![t(3, 4, 3)], |g, v| g.sum_cols(v[0]));
    check("scale_rows", vec![t(3, 4, 3)], |g, v| g.scale_rows(v[0], Rc::new(vec![0.5, -2.0, 0.0])));
    check("slice_rows", vec![t(3, 4, 3)], |g, v| g.slice_rows(v[0], 1, 3));
    check("gather_rows", vec![t(3, 4, 3)], |g, v| {
        g.gather_rows(v[0], Rc::new(vec![Some(2), None, Some(0), Some(2)]))
    });
}

#[test]
fn sparse_primitives() {
    let csr = Rc::new(Csr::weighted(&[vec![0, 2], vec![1], vec![0, 1, 3]], 4, |i, j| 0.3 + (i * 4 + j) as f64 * 0.1).unwrap());
    check("spmm", vec![t(4, 3, 4)], move |g, v| g.spmm(csr.clone(), v[0]));
    check("gather_sum", vec![t(4, 3, 4)], |g, v| g.gather_sum(v[0], &[vec![0, 3], vec![], vec![1, 2, 3]]));
}

#[test]
fn losses() {
    check("cross_entropy", vec![t(3, 5, 5)], |g, v| g.cross_entropy(v[0], Rc::new(vec![4, 0, 2])));
    check("binary_cross_entropy", vec![t(3, 1, 5)], |g, v| {
        g.binary_cross_entropy(v[0], Rc::new(vec![1.0, 0.0, 0.25]))
    });
}

#[test]
fn dropout_and_batch_norm() {
    check("dropout", vec![t(3, 4, 6)], |g, v| {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        g.dropout(v[0], 0.4, true, &mut r)
    });
    check("batch_norm train", vec![t(4, 3, 7), t(1, 3, 8), t(1, 3, 9)], |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], NormMode::Train)?.0)
    });
    let (mean, var) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
    check("batch_norm eval", vec![t(4, 3, 7), t(1, 3, 8), t(1, 3, 9)], move |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], NormMode::Eval { mean: &mean, var: &var })?.0)
    });
}

#[test]
fn sigmoid_meets_tighter_tolerance() {
    let report = grad_check(|g, v| { let s = g.sigmoid(v[0])?; g.sum_all(s) }, &[t(5, 3, 12)], STEP, 1e-6).unwrap();
    assert!(report.passed, "{:?}", report.per_input);
}

#[test]
fn analytic_trivial_gradients() {
    let w = t(3, 4, 13);
    let mut g = Graph::new();
    let p = g.param(w.clone());
    let s = g.sum_all(p).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(p).unwrap().as_slice().iter().all(|&x| x == 1.0));

    let mut g = Graph::new();
    let p = g.param(w.clone());
    let sq = g.mul(p, p).unwrap();
    let s = g.sum_all(sq).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    g.backward(half).unwrap();
    assert!(g.grad(p).unwrap().max_abs_diff(&w).unwrap() < 1e-15);
}

/// End-to-end loss on a 6×8 toy problem with respect to every parameter.
fn forward_loss_check(flavor: GnnFlavor, classes: usize, batch_norm: bool) {
    let mut r = rng(21);
    let x = one_hot_matrix(6, 2, 4, classes, &mut r);
    let state = toy_state(toy_config(8, classes, flavor, batch_norm), 5);
    let mut config = state.config.gnn.clone();
    config.layers = 2;
    let propagator = Propagator::new(&BipartiteGraph::from_matrix(&x), &config).unwrap();
    let masked = vec![false, true, false, true, true, false, false, true];
    let view = FeatureView::prefix(8, 8);

    let mut point = vec![state.embedding.clone(), state.embedding_bias.clone()];
    for l in &state.layers {
        point.push(l.weight.clone());
        point.push(l.bias.clone());
        if let Some(n) = &l.norm {
            point.push(n.gamma.clone());
            point.push(n.beta.clone());
        }
    }
    point.extend(state.gnn.iter().cloned());

    let report = grad_check(
        |g, vars| {
            let mut bound = state.bind(g);
            let mut it = vars.iter().copied();
            bound.embedding = it.next().unwrap();
            bound.embedding_bias = it.next().unwrap();
            for l in &mut bound.layers {
                l.weight = it.next().unwrap();
                l.bias = it.next().unwrap();
                if let Some(n) = &mut l.norm {
                    *n = (it.next().unwrap(), it.next().unwrap());
                }
            }
            for p in &mut bound.gnn {
                *p = it.next().unwrap();
            }
            let extrapolation = Extrapolation::Gnn {
                propagator: &propagator,
                mode: EmbeddingMode::MaskedSet,
                masked: &masked,
            };
            let scores = fate_forward(g, &state, &bound, &view, x.rows(), extrapolation, true, &mut rng(0))?;
            mean_loss(g, state.config.backbone.head, scores.logits, x.labels())
        },
        &point,
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed, "{flavor:?}/{classes}: {:?}", report.per_input);
}

#[test]
fn forward_loss_gcn_softmax() {
    forward_loss_check(GnnFlavor::Gcn, 3, false);
}

#[test]
fn forward_loss_sage_sigmoid_batch_norm() {
    forward_loss_check(GnnFlavor::Sage, 2, true);
}
