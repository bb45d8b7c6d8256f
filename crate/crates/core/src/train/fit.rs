use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::{kshot_sample, minibatch_partition, nfold_split, FoldPlan};
use crate::encode::EncodedMatrix;
use crate::error::{Error, Result};
use crate::eval::{logloss, roc_auc, SelectionPolicy};
use crate::graph::{column_submatrix, BipartiteGraph};
use crate::models::{
    fate_forward, mean_loss, probabilities, BoundModel, EmbeddingMode, Extrapolation, FeatureView,
    Head, ModelConfig, ModelState, Propagator,
};
use crate::ndiff::{Graph, Optimizer, OptimizerKind, Tensor};

/// Random stream used for parameter initialisation.
pub const INIT_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Seeded generator on a named stream, so that independent consumers of one
/// seed never share draws.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Freshly initialised state for `config` under `seed`.
pub fn init_state(config: ModelConfig, seed: u64) -> Result<ModelState> {
    ModelState::new(config, &mut seeded_rng(seed, INIT_STREAM))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Mask each of `n` feature folds in turn and rebuild them with the graph network.
    SelfSupervised,
    /// Train on proxy matrices of `k` sampled raw features.
    Inductive,
    /// Backbone only, no graph network.
    Backbone,
}

/// Update schedule of the two parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Backbone after every fold or step, graph network once per iteration on
    /// the accumulated gradient.
    #[default]
    Asynchronous,
    /// Both groups after every fold or step.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Folds (self-supervised) or sampled steps (inductive) per iteration.
    pub folds: usize,
    /// Raw features per inductive sample.
    pub k: usize,
    /// Instances per mini-batch; derived from `edge_budget` when absent.
    pub batch_size: Option<usize>,
    pub edge_budget: usize,
    /// DropEdge threshold.
    pub rho: f64,
    pub lr_backbone: f64,
    pub lr_gnn: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub selection: SelectionPolicy,
    /// Validate every this many iterations instead of once per epoch.
    pub eval_every: Option<usize>,
    /// Embedding usage; defaults to masked-set for self-supervised and
    /// all-updated for inductive training.
    pub embedding_mode: Option<EmbeddingMode>,
}

impl TrainConfig {
    /// Self-supervised defaults for the small tabular benchmarks.
    pub fn uci() -> Self {
        TrainConfig {
            regime: Regime::SelfSupervised,
            folds: 5,
            k: 1,
            batch_size: None,
            edge_budget: 5_000_000,
            rho: 0.5,
            lr_backbone: 0.01,
            lr_gnn: 0.001,
            epochs: 200,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Asynchronous,
            selection: SelectionPolicy::MinLogloss,
            eval_every: None,
            embedding_mode: None,
        }
    }

    /// Inductive defaults for large click-through streams.
    pub fn ctr() -> Self {
        TrainConfig {
            regime: Regime::Inductive,
            batch_size: Some(100_000),
            lr_backbone: 1e-4,
            lr_gnn: 1e-4,
            selection: SelectionPolicy::MaxAuc,
            eval_every: Some(10),
            ..Self::uci()
        }
    }

    /// Backbone-only training with the same learning rate and budget.
    pub fn backbone() -> Self {
        TrainConfig {
            regime: Regime::Backbone,
            ..Self::uci()
        }
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.embedding_mode.unwrap_or(match self.regime {
            Regime::Inductive => EmbeddingMode::AllUpdated,
            _ => EmbeddingMode::MaskedSet,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::invalid("folds per iteration must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("DropEdge threshold {} outside [0, 1]", self.rho)));
        }
        if !(self.lr_backbone >= 0.0 && self.lr_gnn >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if self.batch_size == Some(0) || self.edge_budget == 0 {
            return Err(Error::invalid("batch size and edge budget must be positive"));
        }
        if self.eval_every == Some(0) {
            return Err(Error::invalid("eval_every must be positive"));
        }
        Ok(())
    }

    /// Instances per batch for a matrix of `n_rows` rows and `nnz` nonzeros.
    pub fn effective_batch(&self, n_rows: usize, nnz: usize) -> usize {
        self.batch_size.unwrap_or_else(|| {
            if nnz <= self.edge_budget || n_rows == 0 {
                n_rows.max(1)
            } else {
                ((self.edge_budget as u128 * n_rows as u128 / nnz as u128) as usize).max(1)
            }
        })
    }
}

/// Optimizers of the backbone and graph network groups.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub theta: Optimizer,
    pub omega: Optimizer,
}

impl Optimizers {
    pub fn new(config: &TrainConfig) -> Self {
        Optimizers {
            theta: Optimizer::new(config.optimizer, config.lr_backbone),
            omega: Optimizer::new(config.optimizer, config.lr_gnn),
        }
    }
}

/// Losses of one iteration and the graph network gradient it accumulated.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub losses: Vec<f64>,
    pub omega_grad: Vec<Tensor>,
}

fn add_grads(acc: &mut Vec<Tensor>, grads: Vec<Tensor>) -> Result<()> {
    if acc.is_empty() {
        *acc = grads;
        return Ok(());
    }
    for (a, g) in acc.iter_mut().zip(&grads) {
        a.add_assign(g)?;
    }
    Ok(())
}

/// Applies the updates that follow one backward pass.
fn apply_step(
    state: &mut ModelState,
    g: &Graph,
    bound: &BoundModel,
    opt: &mut Optimizers,
    schedule: Schedule,
    omega_acc: &mut Vec<Tensor>,
) -> Result<()> {
    let theta = bound.theta_grads(g);
    let omega = bound.omega_grads(g);
    opt.theta.step(&mut state.theta_mut(), &theta)?;
    match schedule {
        Schedule::Joint => {
            opt.omega.step(&mut state.omega_mut(), &omega)?;
            add_grads(omega_acc, omega)
        }
        Schedule::Asynchronous => add_grads(omega_acc, omega),
    }
}

fn finish_iteration(
    state: &mut ModelState,
    opt: &mut Optimizers,
    schedule: Schedule,
    losses: Vec<f64>,
    omega_grad: Vec<Tensor>,
) -> Result<IterationOutcome> {
    if schedule == Schedule::Asynchronous && !omega_grad.is_empty() {
        opt.omega.step(&mut state.omega_mut(), &omega_grad)?;
    }
    Ok(IterationOutcome { losses, omega_grad })
}

/// One self-supervised iteration over `batch` (columns = training features).
pub fn self_supervised_iteration(
    state: &mut ModelState,
    batch: &EncodedMatrix,
    plan: &FoldPlan,
    config: &TrainConfig,
    opt: &mut Optimizers,
    rng: &mut ChaCha8Rng,
) -> Result<IterationOutcome> {
    let features = state.features();
    if batch.n_cols() != features {
        return Err(Error::shape(
            "self_supervised_iteration",
            format!("batch has {} columns, model {}", batch.n_cols(), features),
        ));
    }
    let graph = BipartiteGraph::from_matrix(batch);
    let view = FeatureView::prefix(features, features);
    let head = state.config.backbone.head;
    let mut losses = Vec::with_capacity(plan.folds.len());
    let mut omega_acc = Vec::new();
    for fold in &plan.folds {
        let dropped = graph.drop_edge(config.rho, rng)?;
        let propagator = Propagator::new(&dropped, &state.config.gnn)?;
        let mut masked = vec![false; features];
        for &j in fold {
            masked[j] = true;
        }
        let mut g = Graph::new();
        let bound = state.bind(&mut g);
        let extrapolation = Extrapolation::Gnn {
            propagator: &propagator,
            mode: config.mode(),
            masked: &masked,
        };
        let scores = fate_forward(&mut g, state, &bound, &view, batch.rows(), extrapolation, true, rng)?;
        let loss = mean_loss(&mut g, head, scores.logits, batch.labels())?;
        losses.push(g.value(loss).item()?);
        g.backward(loss)?;
        apply_step(state, &g, &bound, opt, config.schedule, &mut omega_acc)?;
        state.update_running_stats(&scores.batch_stats);
    }
    finish_iteration(state, opt, config.schedule, losses, omega_acc)
}

/// One inductive iteration: `config.folds` updates on freshly sampled proxy matrices.
/// `groups[m]` lists the training features of raw feature `m`.
pub fn inductive_iteration(
    state: &mut ModelState,
    batch: &EncodedMatrix,
    groups: &[Vec<usize>],
    config: &TrainConfig,
    opt: &mut Optimizers,
    rng: &mut ChaCha8Rng,
) -> Result<IterationOutcome> {
    let head = state.config.backbone.head;
    let mut losses = Vec::with_capacity(config.folds);
    let mut omega_acc = Vec::new();
    for _ in 0..config.folds {
        let sample = kshot_sample(groups, config.k, rng)?;
        let proxy = column_submatrix(batch, &sample.features)?;
        let dropped = BipartiteGraph::from_matrix(&proxy).drop_edge(config.rho, rng)?;
        let propagator = Propagator::new(&dropped, &state.config.gnn)?;
        let view = FeatureView::new(sample.features.iter().map(|&j| Some(j)).collect());
        let mut g = Graph::new();
        let bound = state.bind(&mut g);
        let extrapolation = Extrapolation::Gnn {
            propagator: &propagator,
            mode: config.mode(),
            masked: &[],
        };
        let scores = fate_forward(&mut g, state, &bound, &view, proxy.rows(), extrapolation, true, rng)?;
        let loss = mean_loss(&mut g, head, scores.logits, proxy.labels())?;
        losses.push(g.value(loss).item()?);
        g.backward(loss)?;
        apply_step(state, &g, &bound, opt, config.schedule, &mut omega_acc)?;
        state.update_running_stats(&scores.batch_stats);
    }
    finish_iteration(state, opt, config.schedule, losses, omega_acc)
}

/// One supervised backbone update on `batch`.
pub fn backbone_iteration(
    state: &mut ModelState,
    batch: &EncodedMatrix,
    opt: &mut Optimizers,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let view = FeatureView::prefix(state.features(), batch.n_cols());
    let head = state.config.backbone.head;
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let scores = fate_forward(&mut g, state, &bound, &view, batch.rows(), Extrapolation::None, true, rng)?;
    let loss = mean_loss(&mut g, head, scores.logits, batch.labels())?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    opt.theta.step(&mut state.theta_mut(), &bound.theta_grads(&g))?;
    state.update_running_stats(&scores.batch_stats);
    Ok(value)
}

/// Embedding protocol used when scoring rows outside training.
#[derive(Debug, Clone, PartialEq)]
pub enum Inference {
    /// Learned rows only; unseen columns embed as zero.
    Backbone,
    /// Graph network over the scored rows' own bipartite graph.
    Gnn {
        mode: EmbeddingMode,
        /// Known columns to treat as unseen; empty masks nothing.
        masked: Vec<bool>,
    },
}

/// Class probabilities for every row of `x`, whose columns are described by `view`.
pub fn predict(state: &ModelState, x: &EncodedMatrix, view: &FeatureView, inference: &Inference) -> Result<Tensor> {
    if view.len() != x.n_cols() {
        return Err(Error::shape(
            "predict",
            format!("view of {} columns for a matrix of {}", view.len(), x.n_cols()),
        ));
    }
    let mut rng = seeded_rng(0, 0);
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let propagator;
    let extrapolation = match inference {
        Inference::Backbone => Extrapolation::None,
        Inference::Gnn { mode, masked } => {
            propagator = Propagator::new(&BipartiteGraph::from_matrix(x), &state.config.gnn)?;
            Extrapolation::Gnn {
                propagator: &propagator,
                mode: *mode,
                masked,
            }
        }
    };
    let scores = fate_forward(&mut g, state, &bound, view, x.rows(), extrapolation, false, &mut rng)?;
    Ok(probabilities(state.config.backbone.head, g.value(scores.logits)))
}

/// Validation logloss and, for binary heads, ROC-AUC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub logloss: f64,
    pub auc: Option<f64>,
}

pub fn score_probabilities(head: Head, probs: &Tensor, labels: &[usize]) -> Result<ValidationScore> {
    let auc = match head {
        Head::Sigmoid => {
            let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            roc_auc(probs.as_slice(), &positive).ok()
        }
        Head::Softmax { .. } => None,
    };
    Ok(ValidationScore {
        logloss: logloss(probs, labels)?,
        auc,
    })
}

fn validate(state: &ModelState, val: &EncodedMatrix, config: &TrainConfig, plan: Option<&FoldPlan>) -> Result<ValidationScore> {
    let head = state.config.backbone.head;
    let view = FeatureView::prefix(state.features(), val.n_cols());
    match (config.regime, plan) {
        (Regime::SelfSupervised, Some(plan)) => {
            let mut total = 0.0;
            let mut auc_total = 0.0;
            let mut auc_all = true;
            for fold in &plan.folds {
                let mut masked = vec![false; val.n_cols()];
                for &j in fold {
                    masked[j] = true;
                }
                let inference = Inference::Gnn {
                    mode: config.mode(),
                    masked,
                };
                let s = score_probabilities(head, &predict(state, val, &view, &inference)?, val.labels())?;
                total += s.logloss;
                match s.auc {
                    Some(a) => auc_total += a,
                    None => auc_all = false,
                }
            }
            let n = plan.folds.len() as f64;
            Ok(ValidationScore {
                logloss: total / n,
                auc: auc_all.then_some(auc_total / n),
            })
        }
        (Regime::Inductive, _) => {
            let inference = Inference::Gnn {
                mode: config.mode(),
                masked: Vec::new(),
            };
            score_probabilities(head, &predict(state, val, &view, &inference)?, val.labels())
        }
        _ => score_probabilities(head, &predict(state, val, &view, &Inference::Backbone)?, val.labels()),
    }
}

/// Training and validation matrices over the model's feature space.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a EncodedMatrix,
    pub val: &'a EncodedMatrix,
    /// Feature indices of each raw feature, needed by inductive training.
    pub groups: &'a [Vec<usize>],
}

/// One validation point of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iteration: usize,
    /// Mean loss of each fold or step index over the iterations since the last record.
    pub train_losses: Vec<f64>,
    pub val_logloss: f64,
    pub val_auc: Option<f64>,
    pub wall_ms: f64,
}

impl EpochRecord {
    fn criterion(&self, policy: SelectionPolicy) -> Result<f64> {
        match policy {
            SelectionPolicy::MinLogloss => Ok(self.val_logloss),
            SelectionPolicy::MaxAuc => self
                .val_auc
                .ok_or_else(|| Error::invalid("ROC-AUC selection needs a binary task")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// State at the best validation point (the initial state if nothing ran).
    pub state: ModelState,
    pub log: Vec<EpochRecord>,
    /// Index into `log` of the selected record.
    pub best: Option<usize>,
}

/// Runs `config.epochs` epochs from `initial`, keeping the best validated state.
pub fn fit(initial: ModelState, data: &TrainData<'_>, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    let features = initial.features();
    for (name, m) in [("training", data.train), ("validation", data.val)] {
        if m.n_cols() != features {
            return Err(Error::shape(
                "fit",
                format!("{name} matrix has {} columns, model {features}", m.n_cols()),
            ));
        }
    }
    if config.regime == Regime::Inductive && config.k > data.groups.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds the {} raw features",
            config.k,
            data.groups.len()
        )));
    }
    let mut state = initial;
    let mut best_state = state.clone();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut opt = Optimizers::new(config);
    let mut rng = seeded_rng(config.seed, TRAIN_STREAM);
    let all_features: Vec<usize> = (0..features).collect();
    let val_plan = match config.regime {
        Regime::SelfSupervised => Some(nfold_split(&all_features, config.folds, &mut seeded_rng(config.seed, VALIDATION_STREAM))?),
        _ => None,
    };
    let batch = config.effective_batch(data.train.n_rows(), data.train.nnz());
    let started = Instant::now();
    let mut iteration = 0;
    let mut loss_sums: Vec<f64> = Vec::new();
    let mut loss_count = 0usize;
    for epoch in 1..=config.epochs {
        let batches = minibatch_partition(data.train.n_rows(), batch, &mut rng)?;
        for rows in &batches {
            let x = data.train.select_rows(rows);
            let losses = match config.regime {
                Regime::SelfSupervised => {
                    let plan = nfold_split(&all_features, config.folds, &mut rng)?;
                    self_supervised_iteration(&mut state, &x, &plan, config, &mut opt, &mut rng)?.losses
                }
                Regime::Inductive => {
                    inductive_iteration(&mut state, &x, data.groups, config, &mut opt, &mut rng)?.losses
                }
                Regime::Backbone => vec![backbone_iteration(&mut state, &x, &mut opt, &mut rng)?],
            };
            if loss_sums.len() < losses.len() {
                loss_sums.resize(losses.len(), 0.0);
            }
            for (s, l) in loss_sums.iter_mut().zip(&losses) {
                *s += l;
            }
            loss_count += 1;
            iteration += 1;
            let due = match config.eval_every {
                Some(m) => iteration % m == 0,
                None => false,
            };
            if due {
                record(&state, data, config, val_plan.as_ref(), epoch, iteration, &mut loss_sums, &mut loss_count, started, &mut log, &mut best, &mut best_state)?;
            }
        }
        if config.eval_every.is_none() {
            record(&state, data, config, val_plan.as_ref(), epoch, iteration, &mut loss_sums, &mut loss_count, started, &mut log, &mut best, &mut best_state)?;
        }
    }
    Ok(FitResult {
        state: best_state,
        log,
        best: best.map(|(i, _)| i),
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    state: &ModelState,
    data: &TrainData<'_>,
    config: &TrainConfig,
    plan: Option<&FoldPlan>,
    epoch: usize,
    iteration: usize,
    loss_sums: &mut [f64],
    loss_count: &mut usize,
    started: Instant,
    log: &mut Vec<EpochRecord>,
    best: &mut Option<(usize, f64)>,
    best_state: &mut ModelState,
) -> Result<()> {
    let score = validate(state, data.val, config, plan)?;
    let n = (*loss_count).max(1) as f64;
    let rec = EpochRecord {
        epoch,
        iteration,
        train_losses: loss_sums.iter().map(|s| s / n).collect(),
        val_logloss: score.logloss,
        val_auc: score.auc,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    loss_sums.iter_mut().for_each(|s| *s = 0.0);
    *loss_count = 0;
    let value = rec.criterion(config.selection)?;
    if best.is_none_or(|(_, b)| config.selection.improves(value, b)) {
        *best = Some((log.len(), value));
        *best_state = state.clone();
    }
    log.push(rec);
    Ok(())
}
