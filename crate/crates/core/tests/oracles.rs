//! Hand-computed and brute-force oracle values.

mod common;

use std::path::Path;

use common::{direct_accuracy, random_tensor, rng, toy_config, toy_state};
use featx::baselines::{average_extrapolate, knn_extrapolate, knn_neighbours, pooling_extrapolate};
use featx::encode::{build_vocabulary, discretize_continuous, group_rare_features, EncodedMatrix, RawSchema, RawTable};
use featx::eval::{accuracy, roc_auc, select_model, split_chronological, split_random, Protocol, SelectionPolicy, SplitSpec};
use featx::graph::BipartiteGraph;
use featx::models::{
    classify, fate_forward, fm_term, EmbeddingMode, Extrapolation, FeatureView, GnnConfig, GnnFlavor,
    Normalization, Propagator,
};
use featx::ndiff::{sgd_step, Graph, Tensor};
use featx::stability::{binomial, coefficients, proxy_space_size};
use featx::train::{kshot_sample, minibatch_partition, nfold_split};
use num_bigint::BigUint;
use rand::Rng;

fn matrix(cols: usize, rows: &[&[usize]]) -> EncodedMatrix {
    EncodedMatrix::new(cols, rows.iter().map(|r| r.to_vec()).collect(), vec![0; rows.len()]).unwrap()
}

fn dense(x: &EncodedMatrix) -> Tensor {
    let mut t = Tensor::zeros(x.n_rows(), x.n_cols());
    for (i, r) in x.rows().iter().enumerate() {
        for &j in r {
            t.set(i, j, 1.0);
        }
    }
    t
}

fn table(header: &[&str], rows: &[&[&str]]) -> RawTable {
    RawTable::new(
        header.iter().map(|s| s.to_string()).collect(),
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    )
    .unwrap()
}

#[test]
fn bucket_rule_against_direct_formula() {
    let values: Vec<f64> = (0..10).map(f64::from).collect();
    let buckets = discretize_continuous(&values, 10).unwrap();
    let mean = 4.5;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 10.0).sqrt();
    let z: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
    let (lo, hi) = (z[0], z[9]);
    let direct: Vec<usize> = z.iter().map(|v| (((v - lo) / (hi - lo) * 10.0).floor() as usize).min(9)).collect();
    assert_eq!(buckets, direct);
    assert_eq!(buckets, (0..10).collect::<Vec<_>>());
    assert_eq!(discretize_continuous(&[2.0; 4], 5).unwrap(), vec![0; 4]);
}

#[test]
fn rare_grouping() {
    let remap = group_rare_features(&[10, 3, 2, 8], 4);
    assert_eq!(remap.map, vec![0, 1, 1, 2]);
    assert_eq!(remap.size, 3);
    assert_eq!(group_rare_features(&[5, 6], 4).map, vec![0, 1]);
    assert_eq!(group_rare_features(&[1, 2, 3], 4).size, 1);
}

#[test]
fn vocabulary_offsets() {
    let schema = RawSchema::parse("a = categorical\nb = categorical\ny = label\n", Path::new("s")).unwrap();
    let t = table(&["a", "b", "y"], &[&["p", "u", "0"], &["q", "v", "1"], &["q", "w", "0"]]);
    let vocab = build_vocabulary(&t, &schema).unwrap();
    assert_eq!(vocab.cardinalities(), vec![2, 3]);
    assert_eq!(vocab.offsets(), &[0, 2, 5]);
    assert_eq!(vocab.one_hot(&t.rows()[2]).unwrap(), vec![1, 4]);
    let one = table(&["a", "y"], &[&["a", "0"], &["b", "1"], &["c", "0"]]);
    let schema = RawSchema::parse("a = categorical\ny = label", Path::new("s")).unwrap();
    assert_eq!(build_vocabulary(&one, &schema).unwrap().total(), 3);
    let x = build_vocabulary(&t, &RawSchema::parse("a = categorical\nb = categorical\ny = label\n", Path::new("s")).unwrap())
        .unwrap()
        .encode_table(&t)
        .unwrap();
    assert!(x.rows().iter().all(|r| r.len() == 2));
}

#[test]
fn graph_degrees() {
    let g = BipartiteGraph::from_matrix(&matrix(3, &[&[0, 2], &[1, 2]]));
    assert_eq!(g.out_degrees(), vec![1, 1, 2]);
    assert_eq!(g.in_degrees(), vec![2, 2]);
    let one = BipartiteGraph::from_matrix(&matrix(1, &[&[0]]));
    assert_eq!((one.edge_count(), one.in_degrees(), one.out_degrees()), (1, vec![1], vec![1]));
}

#[test]
fn drop_edge_extremes_and_concentration() {
    let rows: Vec<Vec<usize>> = (0..1000).map(|i| (0..10).map(|j| (i + j) % 50).collect::<Vec<_>>()).collect();
    let x = EncodedMatrix::new(50, rows.iter().map(|r| { let mut r = r.clone(); r.sort_unstable(); r.dedup(); r }).collect(), vec![0; 1000]).unwrap();
    let g = BipartiteGraph::from_matrix(&x);
    assert_eq!(g.edge_count(), 10_000);
    assert_eq!(g.drop_edge(0.0, &mut rng(1)).unwrap().edge_count(), 10_000);
    assert_eq!(g.drop_edge(1.0, &mut rng(1)).unwrap().edge_count(), 0);
    for seed in 0..20 {
        let kept = g.drop_edge(0.5, &mut rng(seed)).unwrap().edge_count() as f64;
        assert!((kept - 5000.0).abs() <= 4.0 * 50.0, "seed {seed}: {kept}");
    }
}

#[test]
fn sgd_arithmetic() {
    let mut p = Tensor::from_rows(&[[1.0]]).unwrap();
    sgd_step(&mut [&mut p], &[Tensor::from_rows(&[[2.0]]).unwrap()], 0.5).unwrap();
    assert_eq!(p.as_slice(), &[0.0]);
    // ½(p − 3)² has gradient p − 3.
    let mut p = Tensor::zeros(1, 1);
    let grad = Tensor::from_rows(&[[p.get(0, 0) - 3.0]]).unwrap();
    sgd_step(&mut [&mut p], &[grad], 0.1).unwrap();
    assert!((p.get(0, 0) - 0.3).abs() < 1e-15);
    let mut q = Tensor::filled(2, 2, 1.5);
    sgd_step(&mut [&mut q], &[Tensor::filled(2, 2, 9.0)], 0.0).unwrap();
    assert_eq!(q, Tensor::filled(2, 2, 1.5));
}

#[test]
fn primitive_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[[1.0, 1.0, 1.0]]).unwrap());
    let s = g.softmax(x).unwrap();
    assert!(g.value(s).as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    let z = g.constant(Tensor::zeros(1, 1));
    let sig = g.sigmoid(z).unwrap();
    assert_eq!(g.value(sig).as_slice(), &[0.5]);
    let a = random_tensor(3, 3, &mut rng(2));
    let av = g.constant(a.clone());
    let eye = g.constant(Tensor::identity(3));
    let prod = g.matmul(av, eye).unwrap();
    assert_eq!(g.value(prod), &a);
}

#[test]
fn fm_term_matches_pair_loop() {
    let mut r = rng(4);
    let emb = random_tensor(5, 3, &mut r);
    let rows = vec![vec![0, 1, 2, 3, 4]];
    let mut g = Graph::new();
    let e = g.constant(emb.clone());
    let fm = fm_term(&mut g, e, &rows).unwrap();
    let mut pairs = 0.0;
    for a in 0..5 {
        for b in a + 1..5 {
            pairs += (0..3).map(|c| emb.get(a, c) * emb.get(b, c)).sum::<f64>();
        }
    }
    assert!((g.value(fm).get(0, 0) - pairs).abs() < 1e-10);
    let single = fm_term(&mut g, e, &[vec![2]]).unwrap();
    assert_eq!(g.value(single).get(0, 0), 0.0);
    let ortho = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap());
    let zero = fm_term(&mut g, ortho, &[vec![0, 1]]).unwrap();
    assert_eq!(g.value(zero).get(0, 0), 0.0);
}

#[test]
fn classifier_matches_straight_line_reimplementation() {
    let state = toy_state(toy_config(6, 3, GnnFlavor::Gcn, false), 8);
    let z = random_tensor(4, 4, &mut rng(9));
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let zv = g.constant(z.clone());
    let out = classify(&mut g, &state, &bound, zv, false, &mut rng(0)).unwrap();
    let relu = |t: Tensor| t.map(|v| v.max(0.0));
    let affine = |h: &Tensor, w: &Tensor, b: &Tensor| {
        let mut o = h.matmul(w).unwrap();
        for r in 0..o.rows() {
            for (v, bb) in o.row_mut(r).iter_mut().zip(b.as_slice()) {
                *v += bb;
            }
        }
        o
    };
    let mut h = z.clone();
    for r in 0..h.rows() {
        for (v, b) in h.row_mut(r).iter_mut().zip(state.embedding_bias.as_slice()) {
            *v += b;
        }
    }
    h = relu(h);
    let last = state.layers.len() - 1;
    for (k, l) in state.layers.iter().enumerate() {
        h = affine(&h, &l.weight, &l.bias);
        if k != last {
            h = relu(h);
        }
    }
    assert!(g.value(out.logits).max_abs_diff(&h).unwrap() < 1e-12);
}

#[test]
fn zero_weights_give_uniform_predictions() {
    for (classes, want) in [(2usize, 0.5), (4, 0.25)] {
        let mut state = toy_state(toy_config(6, classes, GnnFlavor::Gcn, false), 1);
        for l in &mut state.layers {
            l.weight = Tensor::zeros(l.weight.rows(), l.weight.cols());
        }
        let x = matrix(6, &[&[0, 3], &[1, 5]]);
        let probs = featx::train::predict(&state, &x, &FeatureView::prefix(6, 6), &featx::train::Inference::Backbone).unwrap();
        assert!(probs.as_slice().iter().all(|p| (p - want).abs() < 1e-15), "{classes}: {probs:?}");
    }
}

fn gnn(flavor: GnnFlavor, layers: usize, width: usize) -> GnnConfig {
    GnnConfig { layers, flavor, width, self_loop: false, normalization: Normalization::Mean }
}

#[test]
fn hand_message_passing() {
    let x = matrix(2, &[&[0, 1]]);
    let prop = Propagator::new(&BipartiteGraph::from_matrix(&x), &gnn(GnnFlavor::Sage, 1, 2)).unwrap();
    let init = Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap();
    let instance = prop.to_instances.agg.mul_dense(&init).unwrap();
    assert_eq!(instance.as_slice(), &[2.0, -1.0]);
    let mut g = Graph::new();
    let iv = g.constant(init.clone());
    let p = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap());
    let after_one = prop.propagate(&mut g, iv, &[p]).unwrap();
    assert_eq!(g.value(after_one), &init);
    let none = prop.propagate(&mut g, iv, &[]).unwrap();
    assert_eq!(g.value(none), &init);
}

#[test]
fn gcn_two_layers_match_closed_form() {
    let mut r = rng(5);
    for _ in 0..20 {
        let rows: Vec<Vec<usize>> = (0..7).map(|i| { let mut v: Vec<usize> = (0..5).filter(|_| r.gen_bool(0.4)).collect(); v.push(i % 5); v.sort_unstable(); v.dedup(); v }).collect();
        let x = EncodedMatrix::new(5, rows, vec![0; 7]).unwrap();
        let xd = dense(&x);
        let w = random_tensor(5, 3, &mut r);
        let prop = Propagator::new(&BipartiteGraph::from_matrix(&x), &gnn(GnnFlavor::Gcn, 2, 3)).unwrap();
        let mut g = Graph::new();
        let wv = g.constant(w.clone());
        let eye: Vec<_> = (0..2).map(|_| g.constant(Tensor::identity(3))).collect();
        let out = prop.propagate(&mut g, wv, &eye).unwrap();
        let t = featx::stability::feature_transition(&xd).unwrap();
        assert!(g.value(out).max_abs_diff(&t.matmul(&w).unwrap()).unwrap() < 1e-10);
    }
}

#[test]
fn masked_feature_is_two_hop_mean() {
    let x = matrix(3, &[&[0, 1], &[0, 2], &[1, 2]]);
    let mut state = toy_state(toy_config(3, 2, GnnFlavor::Gcn, false), 3);
    state.config.gnn = gnn(GnnFlavor::Gcn, 2, 4);
    state.gnn = vec![Tensor::identity(4), Tensor::identity(4)];
    let prop = Propagator::new(&BipartiteGraph::from_matrix(&x), &state.config.gnn).unwrap();
    let masked = [true, false, false];
    let view = FeatureView::prefix(3, 3);
    let e = &state.embedding;
    // Instances 0 and 1 contain feature 0; with its row zeroed they average w1/2 and w2/2.
    let mut hand = vec![0.0; 4];
    for c in 0..4 {
        hand[c] = (e.get(1, c) / 2.0 + e.get(2, c) / 2.0) / 2.0;
    }
    let mut expected_state = state.clone();
    expected_state.embedding.row_mut(0).copy_from_slice(&hand);
    let logits = |st: &featx::models::ModelState, ext: Extrapolation<'_>| {
        let mut g = Graph::new();
        let bound = st.bind(&mut g);
        let s = fate_forward(&mut g, st, &bound, &view, x.rows(), ext, false, &mut rng(0)).unwrap();
        g.value(s.logits).clone()
    };
    let got = logits(&state, Extrapolation::Gnn { propagator: &prop, mode: EmbeddingMode::MaskedSet, masked: &masked });
    let want = logits(&expected_state, Extrapolation::None);
    assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    let unmasked = logits(&state, Extrapolation::Gnn { propagator: &prop, mode: EmbeddingMode::MaskedSet, masked: &[] });
    assert_eq!(unmasked, logits(&state, Extrapolation::None));
}

#[test]
fn all_masked_with_zero_network_predicts_one_value() {
    let x = matrix(4, &[&[0, 1], &[2, 3], &[1, 2]]);
    let mut state = toy_state(toy_config(4, 2, GnnFlavor::Gcn, false), 6);
    state.gnn.iter_mut().for_each(|p| *p = Tensor::zeros(p.rows(), p.cols()));
    let prop = Propagator::new(&BipartiteGraph::from_matrix(&x), &state.config.gnn).unwrap();
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let ext = Extrapolation::Gnn { propagator: &prop, mode: EmbeddingMode::MaskedSet, masked: &[true; 4] };
    let s = fate_forward(&mut g, &state, &bound, &FeatureView::prefix(4, 4), x.rows(), ext, false, &mut rng(0)).unwrap();
    let v = g.value(s.logits);
    assert!((0..3).all(|r| v.row(r) == v.row(0)));
}

#[test]
fn nfold_sizes_for_gene() {
    let features: Vec<usize> = (0..287).collect();
    let plan = nfold_split(&features, 5, &mut rng(0)).unwrap();
    let mut sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, vec![58, 58, 57, 57, 57]);
    let mut all = plan.folds.concat();
    all.sort_unstable();
    assert_eq!(all, features);
    let one = nfold_split(&features, 1, &mut rng(0)).unwrap();
    assert_eq!(one.folds.len(), 1);
    let shuffles: std::collections::BTreeSet<Vec<Vec<usize>>> = (0..10).map(|s| nfold_split(&features, 5, &mut rng(s)).unwrap().folds).collect();
    assert_eq!(shuffles.len(), 10);
}

#[test]
fn kshot_frequencies_are_uniform() {
    let groups: Vec<Vec<usize>> = (0..10).map(|m| vec![m]).collect();
    let mut counts = [0usize; 10];
    let mut r = rng(12);
    for _ in 0..50_000 {
        for m in kshot_sample(&groups, 3, &mut r).unwrap().raws {
            counts[m] += 1;
        }
    }
    for c in counts {
        let freq = c as f64 / 50_000.0;
        assert!((freq - 0.3).abs() < 0.01, "{freq}");
    }
    let blocks = vec![vec![0, 1], vec![2, 3, 4], vec![5, 6, 7, 8]];
    let full = kshot_sample(&blocks, 3, &mut r).unwrap();
    assert_eq!(full.features.len(), 9);
}

#[test]
fn minibatch_counts() {
    let b = minibatch_partition(10, 3, &mut rng(0)).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
    assert_eq!(minibatch_partition(10, 3, &mut rng(0)).unwrap(), b);
    assert_eq!(minibatch_partition(5, 50, &mut rng(0)).unwrap().len(), 1);
}

#[test]
fn selection_scan() {
    assert_eq!(select_model(&[0.9, 0.5, 0.5, 0.7], SelectionPolicy::MinLogloss).unwrap(), 1);
    assert_eq!(select_model(&[0.4], SelectionPolicy::MinLogloss).unwrap(), 0);
    assert_eq!(select_model(&[0.9, 0.8, 0.7], SelectionPolicy::MinLogloss).unwrap(), 2);
    assert_eq!(select_model(&[0.6, 0.8, 0.7], SelectionPolicy::MaxAuc).unwrap(), 1);
}

#[test]
fn split_rules() {
    let spec = SplitSpec { protocol: Protocol::Random, fractions: [0.6, 0.2, 0.2], observed_ratio: 1.0, fold_count: 10, seed: 3 };
    let s = split_random(10, 7, &spec).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    assert!(s.unobserved.is_empty());
    assert_eq!(split_random(10, 7, &spec).unwrap(), s);
    let c = split_chronological(10, 10).unwrap();
    assert_eq!(c.folds, (0..10).map(|k| k..k + 1).collect::<Vec<_>>());
}

#[test]
fn new_features_by_set_difference() {
    let reference = vec![vec![0, 1], vec![1, 2]];
    let later = vec![vec![0, 5], vec![2, 7], vec![5]];
    let new: Vec<usize> = featx::eval::new_features(&reference, &later).into_iter().collect();
    assert_eq!(new, vec![5, 7]);
}

#[test]
fn metric_oracles() {
    let mut r = rng(14);
    let probs = random_tensor(100, 3, &mut r).map(f64::abs);
    let labels: Vec<usize> = (0..100).map(|_| r.gen_range(0..3)).collect();
    assert_eq!(accuracy(&probs, &labels).unwrap(), direct_accuracy(&probs, &labels));
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
}

#[test]
fn coefficient_arithmetic() {
    let ones = Tensor::filled(2, 2, 1.0);
    let c = coefficients(&ones, 2).unwrap();
    assert!(c.as_slice().iter().all(|v| (v - 0.5).abs() < 1e-15));
    assert_eq!(coefficients(&ones, 1).unwrap(), Tensor::identity(2));
    assert_eq!(binomial(5, 5), BigUint::from(1u32));
    assert_eq!(binomial(22, 17), BigUint::from(26_334u32));
    assert_eq!(proxy_space_size(6, 3, 4, 2, true).unwrap(), BigUint::from(120u32));
    assert_eq!(proxy_space_size(7, 7, 1, 1, false).unwrap(), BigUint::from(1u32));
}

#[test]
fn baseline_oracles() {
    let mut r = rng(15);
    let w = random_tensor(7, 3, &mut r);
    let avg = average_extrapolate(&w, 2).unwrap();
    for c in 0..3 {
        let mean = (0..7).map(|i| w.get(i, c)).sum::<f64>() / 7.0;
        assert!((avg.get(1, c) - mean).abs() < 1e-12);
    }
    let lonely = matrix(3, &[&[0], &[1]]);
    let w2 = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
    assert_eq!(pooling_extrapolate(&lonely, &w2).unwrap().as_slice(), &[0.0, 0.0]);
    assert_eq!(knn_neighbours(10, 0.2), 2);
    let x = matrix(4, &[&[0, 3], &[0, 3], &[1, 2]]);
    let wk = Tensor::from_rows(&[[1.0], [2.0], [4.0]]).unwrap();
    assert_eq!(knn_extrapolate(&x, &wk, 0.2).unwrap().as_slice(), &[1.0]);
}
