//! End-to-end experiment drivers: random-split runs of one method and the
//! chronological synthetic stream.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{average_extrapolate, knn_extrapolate, pooling_extrapolate, BaselineKind, KNN_TOP_FRACTION};
use crate::encode::{build_vocabulary, EncodedMatrix, FeatureExpansion, FeatureVocabulary, RawSchema, RawTable};
use crate::error::{Error, Result};
use crate::eval::{accuracy, logloss, roc_auc, split_chronological, split_random, SplitSpec};
use crate::models::{BackboneConfig, BackboneVariant, FeatureView, GnnConfig, ModelConfig, ModelState};
use crate::ndiff::Tensor;
use crate::train::{
    fit, init_state, predict, seeded_rng, EpochRecord, FitResult, Inference, Regime, Schedule,
    TrainConfig, TrainData,
};

const EXTENSION_STREAM: u64 = 4;

/// A method of the comparison: the extrapolation model, one of its ablations, or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Fate,
    /// Self-supervised training with DropEdge disabled.
    FateNoDropEdge,
    /// Both parameter groups updated after every fold.
    FateJoint,
    /// Inductive k-shot training.
    FateInductive,
    Baseline(BaselineKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fate => "fate",
            Method::FateNoDropEdge => "fate_no_dropedge",
            Method::FateJoint => "fate_joint",
            Method::FateInductive => "fate_inductive",
            Method::Baseline(k) => k.name(),
        }
    }

    /// The model and the six baselines.
    pub fn standard() -> Vec<Method> {
        std::iter::once(Method::Fate)
            .chain(BaselineKind::ALL.into_iter().map(Method::Baseline))
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fate" => Ok(Method::Fate),
            "fate_no_dropedge" => Ok(Method::FateNoDropEdge),
            "fate_joint" => Ok(Method::FateJoint),
            "fate_inductive" => Ok(Method::FateInductive),
            _ => s.parse().map(Method::Baseline).map_err(|_| Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

/// Test metric of a task: accuracy for multi-class, ROC-AUC for binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RocAuc,
}

impl Metric {
    pub fn for_classes(classes: usize) -> Self {
        if classes > 2 {
            Metric::Accuracy
        } else {
            Metric::RocAuc
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
        }
    }

    pub fn compute(self, probs: &Tensor, labels: &[usize]) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(probs, labels),
            Metric::RocAuc => {
                let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                roc_auc(probs.as_slice(), &positive)
            }
        }
    }
}

/// Encoded dataset with its one-hot block layout.
#[derive(Debug, Clone)]
pub struct Task {
    pub matrix: EncodedMatrix,
    pub blocks: Vec<Range<usize>>,
    pub classes: usize,
}

impl Task {
    pub fn from_vocabulary(vocab: &FeatureVocabulary, table: &RawTable) -> Result<Self> {
        Ok(Task {
            matrix: vocab.encode_table(table)?,
            blocks: vocab.block_ranges(),
            classes: vocab.num_classes(),
        })
    }

    /// Reads a CSV and its schema and encodes every row.
    pub fn load(csv: &Path, schema: &Path) -> Result<(Task, FeatureVocabulary)> {
        let schema = RawSchema::load(schema)?;
        let table = RawTable::from_csv_path(csv)?;
        let vocab = build_vocabulary(&table, &schema)?;
        Ok((Task::from_vocabulary(&vocab, &table)?, vocab))
    }

    pub fn metric(&self) -> Metric {
        Metric::for_classes(self.classes)
    }
}

/// Architecture and optimisation settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub backbone: BackboneConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    #[serde(default = "default_knn")]
    pub knn_top_fraction: f64,
    /// Raw features per inductive sample; half the observed raw features when absent.
    #[serde(default)]
    pub inductive_k: Option<usize>,
}

fn default_knn() -> f64 {
    KNN_TOP_FRACTION
}

impl MethodSettings {
    pub fn uci(classes: usize) -> Self {
        MethodSettings {
            backbone: BackboneConfig::uci(classes),
            gnn: GnnConfig::uci(),
            train: TrainConfig::uci(),
            knn_top_fraction: KNN_TOP_FRACTION,
            inductive_k: None,
        }
    }

    /// Plain click-through backbone, two GraphSAGE layers, inductive training.
    pub fn ctr(variant: BackboneVariant) -> Self {
        MethodSettings {
            backbone: BackboneConfig::ctr(variant),
            gnn: GnnConfig::ctr(),
            train: TrainConfig::ctr(),
            knn_top_fraction: KNN_TOP_FRACTION,
            inductive_k: None,
        }
    }

    fn model(&self, features: usize) -> ModelConfig {
        ModelConfig {
            features,
            backbone: self.backbone.clone(),
            gnn: self.gnn.clone(),
        }
    }
}

/// One random split with columns renumbered so that observed features come first.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub observed: usize,
    pub total: usize,
    /// Train, validation and test rows over every column.
    pub train: EncodedMatrix,
    pub val: EncodedMatrix,
    pub test: EncodedMatrix,
    /// Per raw feature, its observed columns (raw features without any are skipped).
    pub observed_groups: Vec<Vec<usize>>,
    pub all_groups: Vec<Vec<usize>>,
}

impl PreparedSplit {
    fn keep(&self, m: &EncodedMatrix, pred: impl Fn(usize) -> bool) -> Result<EncodedMatrix> {
        let map: Vec<Option<usize>> = (0..self.total).map(|j| pred(j).then_some(j)).collect();
        m.remap_columns(&map, self.total)
    }

    /// `m` restricted to the observed columns, with `observed` columns.
    pub fn observed_only(&self, m: &EncodedMatrix) -> Result<EncodedMatrix> {
        let map: Vec<Option<usize>> = (0..self.total).map(|j| (j < self.observed).then_some(j)).collect();
        m.remap_columns(&map, self.observed)
    }

    /// `m` restricted to the unobserved columns, keeping every column slot.
    pub fn unobserved_only(&self, m: &EncodedMatrix) -> Result<EncodedMatrix> {
        self.keep(m, |j| j >= self.observed)
    }
}

pub fn prepare_split(task: &Task, spec: &SplitSpec) -> Result<PreparedSplit> {
    let total = task.matrix.n_cols();
    let split = split_random(task.matrix.n_rows(), total, spec)?;
    let mut map = vec![None; total];
    for (new, &old) in split.observed.iter().chain(&split.unobserved).enumerate() {
        map[old] = Some(new);
    }
    let observed = split.observed.len();
    let renamed = |rows: &[usize]| task.matrix.select_rows(rows).remap_columns(&map, total);
    let all_groups: Vec<Vec<usize>> = task
        .blocks
        .iter()
        .map(|b| {
            let mut g: Vec<usize> = b.clone().filter_map(|j| map[j]).collect();
            g.sort_unstable();
            g
        })
        .collect();
    let observed_groups = all_groups
        .iter()
        .map(|g| g.iter().copied().filter(|&j| j < observed).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    Ok(PreparedSplit {
        observed,
        total,
        train: renamed(&split.train)?,
        val: renamed(&split.val)?,
        test: renamed(&split.test)?,
        observed_groups,
        all_groups,
    })
}

/// A fitted model and the protocol that scores rows with it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub state: ModelState,
    pub log: Vec<EpochRecord>,
    pub inference: Inference,
}

/// Result of training and testing one method on one split.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metric: Metric,
    pub value: f64,
    pub test_logloss: f64,
    pub model: TrainedModel,
}

/// Test-time protocol of a method: graph extrapolation for the model and its
/// ablations, learned (or heuristically filled) rows for the baselines.
pub fn inference_for(method: Method, settings: &MethodSettings) -> Inference {
    match method {
        Method::Baseline(_) => Inference::Backbone,
        _ => Inference::Gnn {
            mode: train_config(settings, method, 0, 1).mode(),
            masked: Vec::new(),
        },
    }
}

/// Metric value and logloss of `x`, whose first `state.features()` columns are
/// the model's features and the rest are unseen.
pub fn score(state: &ModelState, x: &EncodedMatrix, inference: &Inference, metric: Metric) -> Result<(f64, f64)> {
    let view = FeatureView::prefix(state.features(), x.n_cols());
    let probs = predict(state, x, &view, inference)?;
    Ok((metric.compute(&probs, x.labels())?, logloss(&probs, x.labels())?))
}

fn train_config(settings: &MethodSettings, method: Method, seed: u64, raw_observed: usize) -> TrainConfig {
    let mut config = settings.train.clone();
    config.seed = seed;
    match method {
        Method::Fate => config.regime = Regime::SelfSupervised,
        Method::FateNoDropEdge => {
            config.regime = Regime::SelfSupervised;
            config.rho = 0.0;
        }
        Method::FateJoint => {
            config.regime = Regime::SelfSupervised;
            config.schedule = Schedule::Joint;
        }
        Method::FateInductive => {
            config.regime = Regime::Inductive;
            config.k = settings.inductive_k.unwrap_or((raw_observed / 2).max(1));
        }
        Method::Baseline(_) => config.regime = Regime::Backbone,
    }
    config
}

fn fit_on(settings: &MethodSettings, config: &TrainConfig, features: usize, data: &TrainData<'_>) -> Result<FitResult> {
    let state = init_state(settings.model(features), config.seed)?;
    fit(state, data, config)
}

/// Fits the method on the split: observed columns only, except for the
/// oracle (every column) and the second stage of the incremental baseline.
pub fn train_method(split: &PreparedSplit, method: Method, settings: &MethodSettings, seed: u64) -> Result<TrainedModel> {
    let config = train_config(settings, method, seed, split.observed_groups.len());
    let train_obs = split.observed_only(&split.train)?;
    let val_obs = split.observed_only(&split.val)?;
    let observed_data = TrainData {
        train: &train_obs,
        val: &val_obs,
        groups: &split.observed_groups,
    };
    let result = match method {
        Method::Fate | Method::FateNoDropEdge | Method::FateJoint | Method::FateInductive | Method::Baseline(BaselineKind::Base) => {
            fit_on(settings, &config, split.observed, &observed_data)?
        }
        Method::Baseline(BaselineKind::Oracle) => {
            let data = TrainData {
                train: &split.train,
                val: &split.val,
                groups: &split.all_groups,
            };
            fit_on(settings, &config, split.total, &data)?
        }
        Method::Baseline(BaselineKind::Inl) => {
            let first = fit_on(settings, &config, split.observed, &observed_data)?;
            let new = split.total - split.observed;
            let width = settings.backbone.width();
            let mut rng = seeded_rng(seed, EXTENSION_STREAM);
            let bound = 1.0 / (width as f64).sqrt();
            let rows = (0..new * width).map(|_| rng.gen_range(-bound..=bound)).collect();
            let extended = first.state.with_new_features(&Tensor::from_vec(new, width, rows)?)?;
            let train_new = split.unobserved_only(&split.train)?;
            let data = TrainData {
                train: &train_new,
                val: &split.val,
                groups: &split.all_groups,
            };
            let mut second = fit(extended, &data, &config)?;
            let mut log = first.log;
            log.append(&mut second.log);
            second.log = log;
            second
        }
        Method::Baseline(kind @ (BaselineKind::Average | BaselineKind::Pooling | BaselineKind::Knn)) => {
            let mut r = fit_on(settings, &config, split.observed, &observed_data)?;
            let w = &r.state.embedding;
            let new_rows = match kind {
                BaselineKind::Average => average_extrapolate(w, split.total - split.observed)?,
                BaselineKind::Pooling => pooling_extrapolate(&split.test, w)?,
                _ => knn_extrapolate(&split.test, w, settings.knn_top_fraction)?,
            };
            r.state = r.state.with_new_features(&new_rows)?;
            r
        }
    };
    Ok(TrainedModel {
        state: result.state,
        log: result.log,
        inference: inference_for(method, settings),
    })
}

/// Trains the method and scores the test rows with every column.
pub fn run_method(task: &Task, split: &PreparedSplit, method: Method, settings: &MethodSettings, seed: u64) -> Result<RunOutcome> {
    let model = train_method(split, method, settings, seed)?;
    let metric = task.metric();
    let (value, test_logloss) = score(&model.state, &split.test, &model.inference, metric)?;
    Ok(RunOutcome {
        metric,
        value,
        test_logloss,
        model,
    })
}

/// Parameters of the synthetic chronological stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub rows: usize,
    pub folds: usize,
    /// Latent clusters that drive the label.
    pub clusters: usize,
    /// Raw features whose values persist over time but carry little signal.
    pub stable_features: usize,
    pub stable_cardinality: usize,
    /// Probability that a stable value reflects the row's cluster.
    pub stable_signal: f64,
    /// Raw features whose values are replaced every fold and track the cluster.
    pub drifting_features: usize,
    /// Values per (fold, cluster) of a drifting feature.
    pub drifting_variants: usize,
    /// Probability that a drifting value reflects the row's cluster.
    pub drifting_signal: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            rows: 100_000,
            folds: 10,
            clusters: 16,
            stable_features: 4,
            stable_cardinality: 32,
            stable_signal: 0.35,
            drifting_features: 4,
            drifting_variants: 4,
            drifting_signal: 0.9,
            seed: 0,
        }
    }
}

/// Schema of [`synthetic_stream`] tables.
pub fn stream_schema(config: &StreamConfig) -> Result<RawSchema> {
    use crate::encode::{ColumnKind, ColumnSpec};
    let mut columns: Vec<ColumnSpec> = (0..config.stable_features)
        .map(|m| ColumnSpec {
            name: format!("s{m}"),
            kind: ColumnKind::Categorical,
        })
        .chain((0..config.drifting_features).map(|m| ColumnSpec {
            name: format!("t{m}"),
            kind: ColumnKind::Categorical,
        }))
        .collect();
    columns.push(ColumnSpec {
        name: "click".to_string(),
        kind: ColumnKind::Label,
    });
    RawSchema::new(columns, crate::encode::DEFAULT_BUCKETS)
}

/// Rows in time order. Each row has a latent cluster with a fixed click rate;
/// stable values are weakly tied to the cluster, drifting values are fresh in
/// every fold and strongly tied to it.
pub fn synthetic_stream(config: &StreamConfig) -> Result<RawTable> {
    if config.clusters < 2 || config.rows < config.folds || config.folds < 3 {
        return Err(Error::invalid("stream needs two clusters and at least three non-empty folds"));
    }
    let schema = stream_schema(config)?;
    let mut rng: ChaCha8Rng = seeded_rng(config.seed, 0);
    let click_rate: Vec<f64> = (0..config.clusters)
        .map(|c| if c % 2 == 0 { 0.15 } else { 0.85 })
        .collect();
    let stable_of: Vec<Vec<usize>> = (0..config.stable_features)
        .map(|_| (0..config.clusters).map(|_| rng.gen_range(0..config.stable_cardinality)).collect())
        .collect();
    let size = config.rows / config.folds;
    let mut rows = Vec::with_capacity(config.rows);
    for i in 0..config.rows {
        let fold = (i / size).min(config.folds - 1);
        let cluster = rng.gen_range(0..config.clusters);
        let mut row = Vec::with_capacity(config.stable_features + config.drifting_features + 1);
        for tied in &stable_of {
            let v = if rng.gen_bool(config.stable_signal) {
                tied[cluster]
            } else {
                rng.gen_range(0..config.stable_cardinality)
            };
            row.push(format!("v{v}"));
        }
        for _ in 0..config.drifting_features {
            let c = if rng.gen_bool(config.drifting_signal) {
                cluster
            } else {
                rng.gen_range(0..config.clusters)
            };
            let variant = rng.gen_range(0..config.drifting_variants);
            row.push(format!("f{fold}c{c}v{variant}"));
        }
        let click = rng.gen_bool(click_rate[cluster]);
        row.push(u8::from(click).to_string());
        rows.push(row);
    }
    let header = schema.columns().iter().map(|c| c.name.clone()).collect();
    RawTable::new(header, rows)
}

/// Metric of one test fold of the chronological protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based test split index (fold 3 is test split 1).
    pub split: usize,
    pub rows: usize,
    /// Fraction of the fold's distinct features absent from the training fold.
    pub new_fraction: f64,
    pub value: f64,
}

/// Encoded folds of the chronological protocol: vocabulary and training rows
/// from fold 1, validation from fold 2 (restricted to training features), and
/// every later fold encoded with fresh indices for unseen values.
#[derive(Debug, Clone)]
pub struct ChronologicalData {
    pub vocab: FeatureVocabulary,
    pub train: EncodedMatrix,
    pub val: EncodedMatrix,
    pub groups: Vec<Vec<usize>>,
    pub tests: Vec<EncodedMatrix>,
}

impl ChronologicalData {
    pub fn prepare(table: &RawTable, schema: &RawSchema, folds: usize) -> Result<Self> {
        let split = split_chronological(table.len(), folds)?;
        let rows_of = |r: Range<usize>| r.collect::<Vec<_>>();
        let train_table = table.subset(&rows_of(split.train()));
        let vocab = build_vocabulary(&train_table, schema)?;
        let d = vocab.total();
        let train = vocab.encode_table(&train_table)?;
        let mut expansion = FeatureExpansion::new(&vocab);
        let val_full = expansion.encode_table(&vocab, &table.subset(&rows_of(split.val())))?;
        let known: Vec<Option<usize>> = (0..val_full.n_cols()).map(|j| (j < d).then_some(j)).collect();
        let val = val_full.remap_columns(&known, d)?;
        let tests = split
            .tests()
            .iter()
            .map(|r| expansion.encode_table(&vocab, &table.subset(&rows_of(r.clone()))))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChronologicalData {
            groups: vocab.block_ranges().into_iter().map(|b| b.collect()).collect(),
            vocab,
            train,
            val,
            tests,
        })
    }

    /// Fraction of the distinct features of test split `t` (0-based) that are new.
    pub fn new_fraction(&self, t: usize) -> f64 {
        let d = self.vocab.total();
        let mut present: Vec<usize> = self.tests[t].rows().iter().flatten().copied().collect();
        present.sort_unstable();
        present.dedup();
        let new = present.iter().filter(|&&j| j >= d).count();
        new as f64 / present.len().max(1) as f64
    }
}

/// Trains on fold 1 with validation on fold 2. Only the model variants and the
/// plain baseline apply: the other baselines need a fixed unobserved set.
pub fn train_chronological(data: &ChronologicalData, method: Method, settings: &MethodSettings, seed: u64) -> Result<TrainedModel> {
    match method {
        Method::Baseline(kind) if kind != BaselineKind::Base => {
            return Err(Error::invalid(format!(
                "method `{method}` is not supported on the chronological protocol"
            )))
        }
        _ => {}
    }
    let config = train_config(settings, method, seed, data.groups.len());
    let train = TrainData {
        train: &data.train,
        val: &data.val,
        groups: &data.groups,
    };
    let result = fit_on(settings, &config, data.vocab.total(), &train)?;
    Ok(TrainedModel {
        state: result.state,
        log: result.log,
        inference: inference_for(method, settings),
    })
}

/// Scores every test split with every feature it contains.
pub fn score_chronological(data: &ChronologicalData, model: &TrainedModel) -> Result<Vec<FoldResult>> {
    let metric = Metric::for_classes(data.vocab.num_classes());
    data.tests
        .iter()
        .enumerate()
        .map(|(t, x)| {
            Ok(FoldResult {
                split: t + 1,
                rows: x.n_rows(),
                new_fraction: data.new_fraction(t),
                value: score(&model.state, x, &model.inference, metric)?.0,
            })
        })
        .collect()
}
