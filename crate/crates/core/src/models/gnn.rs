use std::rc::Rc;

use super::config::{GnnConfig, GnnFlavor, Normalization};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::ndiff::{Csr, Graph, Var};

/// One direction of message passing: `target ← self_weight ⊙ target + agg · source`.
#[derive(Debug, Clone)]
pub struct Hop {
    pub agg: Rc<Csr>,
    /// Coefficient of the node's own state; empty when the flavor has no self term.
    pub self_weight: Rc<Vec<f64>>,
}

/// Aggregation operators of one bipartite graph for a given configuration.
#[derive(Debug, Clone)]
pub struct Propagator {
    flavor: GnnFlavor,
    width: usize,
    n_features: usize,
    /// Features to instances.
    pub to_instances: Hop,
    /// Instances to features.
    pub to_features: Hop,
}

fn inv_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        0.0
    }
}

impl Propagator {
    pub fn new(graph: &BipartiteGraph, config: &GnnConfig) -> Result<Self> {
        let d_in = graph.in_degrees();
        let d_out = graph.out_degrees();
        let (to_instances, to_features) = match config.flavor {
            GnnFlavor::Gcn => {
                let sl = if config.self_loop { 1.0 } else { 0.0 };
                let din: Vec<f64> = d_in.iter().map(|&d| d as f64 + sl).collect();
                let dout: Vec<f64> = d_out.iter().map(|&d| d as f64 + sl).collect();
                let weight = |a: f64, b: f64| match config.normalization {
                    Normalization::Mean => inv_or_zero(a),
                    Normalization::Symmetric => inv_or_zero((a * b).sqrt()),
                };
                let inst = Csr::weighted(graph.row_adj(), graph.n_features(), |i, j| {
                    weight(din[i], dout[j])
                })?;
                let feat = Csr::weighted(graph.col_adj(), graph.n_instances(), |j, i| {
                    weight(dout[j], din[i])
                })?;
                let inst_self: Vec<f64> = din.iter().map(|&d| sl * inv_or_zero(d)).collect();
                let feat_self: Vec<f64> = dout.iter().map(|&d| sl * inv_or_zero(d)).collect();
                (
                    Hop {
                        agg: Rc::new(inst),
                        self_weight: Rc::new(inst_self),
                    },
                    Hop {
                        agg: Rc::new(feat),
                        self_weight: Rc::new(feat_self),
                    },
                )
            }
            GnnFlavor::Sage => {
                let inst = Csr::weighted(graph.row_adj(), graph.n_features(), |i, _| {
                    inv_or_zero(d_in[i] as f64)
                })?;
                let feat = Csr::weighted(graph.col_adj(), graph.n_instances(), |j, _| {
                    inv_or_zero(d_out[j] as f64)
                })?;
                (
                    Hop {
                        agg: Rc::new(inst),
                        self_weight: Rc::new(Vec::new()),
                    },
                    Hop {
                        agg: Rc::new(feat),
                        self_weight: Rc::new(Vec::new()),
                    },
                )
            }
        };
        Ok(Propagator {
            flavor: config.flavor,
            width: config.width,
            n_features: graph.n_features(),
            to_instances,
            to_features,
        })
    }

    /// Applies one layer to the `target` states given `source` states.
    /// `target = None` stands for all-zero states (instances before their first update).
    fn layer(&self, g: &mut Graph, hop: &Hop, target: Option<Var>, source: Var, transform: Var) -> Result<Var> {
        let agg = g.spmm(hop.agg.clone(), source)?;
        match self.flavor {
            GnnFlavor::Gcn => {
                let combined = match target {
                    Some(t) => {
                        let own = g.scale_rows(t, hop.self_weight.clone())?;
                        g.add(own, agg)?
                    }
                    None => agg,
                };
                g.matmul(combined, transform)
            }
            GnnFlavor::Sage => {
                let h = self.width;
                let p_neigh = g.slice_rows(transform, h, 2 * h)?;
                let neigh = g.matmul(agg, p_neigh)?;
                match target {
                    Some(t) => {
                        let p_self = g.slice_rows(transform, 0, h)?;
                        let own = g.matmul(t, p_self)?;
                        g.add(own, neigh)
                    }
                    None => Ok(neigh),
                }
            }
        }
    }

    /// Runs `transforms.len()` alternating layers from feature states `init`.
    ///
    /// Odd layers update instance states from feature states; even layers update
    /// feature states from instance states. Instance states start at zero and the
    /// returned value is the feature states after the last layer.
    pub fn propagate(&self, g: &mut Graph, init: Var, transforms: &[Var]) -> Result<Var> {
        let (rows, cols) = g.value(init).shape();
        if rows != self.n_features || cols != self.width {
            return Err(Error::shape(
                "gnn_propagate",
                format!("initial states {rows}x{cols}, graph has {} features of width {}", self.n_features, self.width),
            ));
        }
        let mut instances: Option<Var> = None;
        let mut features = init;
        for (l, &p) in transforms.iter().enumerate() {
            let want = match self.flavor {
                GnnFlavor::Gcn => (self.width, self.width),
                GnnFlavor::Sage => (2 * self.width, self.width),
            };
            if g.value(p).shape() != want {
                return Err(Error::shape(
                    "gnn_propagate",
                    format!("layer {l} transform {:?}, expected {want:?}", g.value(p).shape()),
                ));
            }
            if l % 2 == 0 {
                instances = Some(self.layer(g, &self.to_instances, instances, features, p)?);
            } else {
                let source = instances.expect("instance states exist after an odd layer");
                features = self.layer(g, &self.to_features, Some(features), source, p)?;
            }
        }
        Ok(features)
    }
}
