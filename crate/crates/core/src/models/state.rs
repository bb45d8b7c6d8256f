use rand::Rng;

use super::config::{BackboneVariant, ModelConfig};
use crate::error::{Error, Result};
use crate::ndiff::{BatchStats, Graph, Tensor, Var};

/// Running-statistic momentum of batch normalisation.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Option<NormParams>,
}

/// All trainable tensors of a model plus batch-norm running statistics.
///
/// The backbone parameters (embedding rows and classifier) and the graph
/// network transforms are disjoint groups so they can be updated on different
/// schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    /// One embedding row per training feature.
    pub embedding: Tensor,
    /// Bias added to the summed embedding before the first activation.
    pub embedding_bias: Tensor,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    /// DeepFM first-order weight per feature.
    pub first_order: Option<Tensor>,
    /// One transform per propagation layer.
    pub gnn: Vec<Tensor>,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

impl ModelState {
    /// Weights uniform in `±1/√fan_in` (`±1/√H` for embeddings and transforms), biases zero.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.backbone.width();
        let b = 1.0 / (h as f64).sqrt();
        let embedding = uniform(config.features, h, b, rng);
        let mut widths = config.backbone.hidden.clone();
        widths.push(config.backbone.head.outputs());
        let hidden_layers = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let norm = (config.backbone.batch_norm && k < hidden_layers).then(|| NormParams {
                    gamma: Tensor::filled(1, w[1], 1.0),
                    beta: Tensor::zeros(1, w[1]),
                    running_mean: vec![0.0; w[1]],
                    running_var: vec![1.0; w[1]],
                });
                Dense {
                    weight: uniform(w[0], w[1], bound, rng),
                    bias: Tensor::zeros(1, w[1]),
                    norm,
                }
            })
            .collect();
        let first_order = (config.backbone.variant == BackboneVariant::DeepFm)
            .then(|| Tensor::zeros(config.features, 1));
        let gnn = (0..config.gnn.layers)
            .map(|_| uniform(config.gnn.transform_rows(), h, b, rng))
            .collect();
        Ok(ModelState {
            embedding_bias: Tensor::zeros(1, h),
            config,
            embedding,
            layers,
            first_order,
            gnn,
        })
    }

    pub fn features(&self) -> usize {
        self.embedding.rows()
    }

    /// Copy of the state with `rows` appended as embeddings of new features.
    /// New DeepFM first-order weights are zero.
    pub fn with_new_features(&self, rows: &Tensor) -> Result<ModelState> {
        if rows.cols() != self.embedding.cols() {
            return Err(Error::shape(
                "with_new_features",
                format!("new rows of width {}, embedding width {}", rows.cols(), self.embedding.cols()),
            ));
        }
        let mut out = self.clone();
        let mut data = self.embedding.as_slice().to_vec();
        data.extend_from_slice(rows.as_slice());
        let total = self.features() + rows.rows();
        out.embedding = Tensor::from_vec(total, rows.cols(), data)?;
        if let Some(f) = &self.first_order {
            let mut w = f.as_slice().to_vec();
            w.resize(total, 0.0);
            out.first_order = Some(Tensor::from_vec(total, 1, w)?);
        }
        out.config.features = total;
        Ok(out)
    }

    /// Backbone parameters in canonical order.
    pub fn theta_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding, &mut self.embedding_bias];
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        if let Some(f) = &mut self.first_order {
            out.push(f);
        }
        out
    }

    /// Graph network parameters in layer order.
    pub fn omega_mut(&mut self) -> Vec<&mut Tensor> {
        self.gnn.iter_mut().collect()
    }

    /// Every stored tensor with a stable name, including running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("embedding".to_string(), self.embedding.clone()),
            ("embedding_bias".to_string(), self.embedding_bias.clone()),
        ];
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{k}.weight"), l.weight.clone()));
            out.push((format!("layer{k}.bias"), l.bias.clone()));
            if let Some(n) = &l.norm {
                let w = n.running_mean.len();
                out.push((format!("layer{k}.gamma"), n.gamma.clone()));
                out.push((format!("layer{k}.beta"), n.beta.clone()));
                out.push((
                    format!("layer{k}.running_mean"),
                    Tensor::from_vec(1, w, n.running_mean.clone()).expect("sized"),
                ));
                out.push((
                    format!("layer{k}.running_var"),
                    Tensor::from_vec(1, w, n.running_var.clone()).expect("sized"),
                ));
            }
        }
        if let Some(f) = &self.first_order {
            out.push(("first_order".to_string(), f.clone()));
        }
        for (k, p) in self.gnn.iter().enumerate() {
            out.push((format!("gnn{k}"), p.clone()));
        }
        out
    }

    /// Rebuilds a state from its configuration and [`ModelState::named_tensors`] output.
    pub fn from_named_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut state = ModelState::new(config, &mut rng)?;
        let expected = state.named_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::data(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((name, want), (got_name, got)) in expected.iter().zip(&tensors) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::data(format!(
                    "checkpoint tensor `{got_name}` {:?} does not match `{name}` {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        let mut it = tensors.into_iter().map(|(_, t)| t);
        let mut next = || it.next().expect("length checked");
        state.embedding = next();
        state.embedding_bias = next();
        for l in &mut state.layers {
            l.weight = next();
            l.bias = next();
            if let Some(n) = &mut l.norm {
                n.gamma = next();
                n.beta = next();
                n.running_mean = next().into_vec();
                n.running_var = next().into_vec();
            }
        }
        if let Some(f) = &mut state.first_order {
            *f = next();
        }
        for p in &mut state.gnn {
            *p = next();
        }
        Ok(state)
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            embedding: g.param(self.embedding.clone()),
            embedding_bias: g.param(self.embedding_bias.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| BoundDense {
                    weight: g.param(l.weight.clone()),
                    bias: g.param(l.bias.clone()),
                    norm: l
                        .norm
                        .as_ref()
                        .map(|n| (g.param(n.gamma.clone()), g.param(n.beta.clone()))),
                })
                .collect(),
            first_order: self.first_order.as_ref().map(|f| g.param(f.clone())),
            gnn: self.gnn.iter().map(|p| g.param(p.clone())).collect(),
        }
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[Option<BatchStats>]) {
        for (l, s) in self.layers.iter_mut().zip(stats) {
            if let (Some(n), Some(s)) = (&mut l.norm, s) {
                for (r, m) in n.running_mean.iter_mut().zip(&s.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in n.running_var.iter_mut().zip(&s.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
    pub norm: Option<(Var, Var)>,
}

/// Graph leaves of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub embedding: Var,
    pub embedding_bias: Var,
    pub layers: Vec<BoundDense>,
    pub first_order: Option<Var>,
    pub gnn: Vec<Var>,
}

impl BoundModel {
    fn theta_vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding, self.embedding_bias];
        for l in &self.layers {
            out.push(l.weight);
            out.push(l.bias);
            if let Some((g, b)) = l.norm {
                out.push(g);
                out.push(b);
            }
        }
        out.extend(self.first_order);
        out
    }

    /// Accumulated backbone gradients, aligned with [`ModelState::theta_mut`].
    pub fn theta_grads(&self, g: &Graph) -> Vec<Tensor> {
        self.theta_vars().into_iter().map(|v| g.grad_or_zeros(v)).collect()
    }

    /// Accumulated graph network gradients, aligned with [`ModelState::omega_mut`].
    pub fn omega_grads(&self, g: &Graph) -> Vec<Tensor> {
        self.gnn.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }
}
