use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output layer and loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Multi-class softmax with `classes` outputs.
    Softmax { classes: usize },
    /// Single sigmoid output for binary labels.
    Sigmoid,
}

impl Head {
    /// Softmax for three or more classes, sigmoid for two.
    pub fn for_classes(classes: usize) -> Self {
        if classes == 2 {
            Head::Sigmoid
        } else {
            Head::Softmax { classes }
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Head::Softmax { classes } => *classes,
            Head::Sigmoid => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackboneVariant {
    #[default]
    Plain,
    DeepFm,
}

/// Feedforward classifier over summed feature embeddings.
///
/// `hidden[0]` is the embedding width; each further entry adds a hidden layer,
/// and a final linear layer maps to the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub hidden: Vec<usize>,
    pub head: Head,
    #[serde(default)]
    pub variant: BackboneVariant,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub dropout: f64,
}

impl BackboneConfig {
    /// Three layers of width 8 after the embedding.
    pub fn uci(classes: usize) -> Self {
        BackboneConfig {
            hidden: vec![8, 8, 8],
            head: Head::for_classes(classes),
            variant: BackboneVariant::Plain,
            batch_norm: false,
            dropout: 0.0,
        }
    }

    /// 10-400-400-1 with batch normalisation and dropout 0.5.
    pub fn ctr(variant: BackboneVariant) -> Self {
        BackboneConfig {
            hidden: vec![10, 400, 400],
            head: Head::Sigmoid,
            variant,
            batch_norm: true,
            dropout: 0.5,
        }
    }

    pub fn width(&self) -> usize {
        self.hidden.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden sizes must be nonempty and positive"));
        }
        if let Head::Softmax { classes } = self.head {
            if classes < 2 {
                return Err(Error::invalid("softmax head needs at least two classes"));
            }
        }
        if self.variant == BackboneVariant::DeepFm && self.head != Head::Sigmoid {
            return Err(Error::invalid("the DeepFM variant scores binary labels only"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnFlavor {
    Gcn,
    Sage,
}

/// Degree normalisation of GCN-flavoured aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `1/√((dᵢ+1)(dⱼ+1))` per edge with self-loops.
    Symmetric,
    /// `1/(dᵢ+1)`: mean over the neighbourhood including the node itself.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub layers: usize,
    pub flavor: GnnFlavor,
    pub width: usize,
    #[serde(default = "default_true")]
    pub self_loop: bool,
    #[serde(default = "default_norm")]
    pub normalization: Normalization,
}

fn default_true() -> bool {
    true
}

fn default_norm() -> Normalization {
    Normalization::Mean
}

impl GnnConfig {
    /// Four GCN layers of width 8.
    pub fn uci() -> Self {
        GnnConfig {
            layers: 4,
            flavor: GnnFlavor::Gcn,
            width: 8,
            self_loop: true,
            normalization: Normalization::Mean,
        }
    }

    /// Two GraphSAGE layers of width 10.
    pub fn ctr() -> Self {
        GnnConfig {
            layers: 2,
            flavor: GnnFlavor::Sage,
            width: 10,
            self_loop: true,
            normalization: Normalization::Mean,
        }
    }

    /// Row count of each layer's transform.
    pub fn transform_rows(&self) -> usize {
        match self.flavor {
            GnnFlavor::Gcn => self.width,
            GnnFlavor::Sage => 2 * self.width,
        }
    }
}

/// Which feature embeddings the graph network replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Masked and unseen features start from zero and take the network output;
    /// the rest keep their learned rows.
    MaskedSet,
    /// Every feature starts from its learned row (zero if unseen) and takes the
    /// network output.
    AllUpdated,
}

/// Architecture of a complete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: usize,
    pub backbone: BackboneConfig,
    pub gnn: GnnConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.gnn.width != self.backbone.width() {
            return Err(Error::invalid(format!(
                "graph network width {} differs from embedding width {}",
                self.gnn.width,
                self.backbone.width()
            )));
        }
        Ok(())
    }
}
