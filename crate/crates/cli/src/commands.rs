//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use featx::encode::{build_vocabulary, FeatureVocabulary, RawSchema, RawTable};
use featx::eval::Protocol;
use featx::experiment::{
    inference_for, prepare_split, score, score_chronological, stream_schema, synthetic_stream,
    train_chronological, train_method, ChronologicalData, Method, MethodSettings, Metric, Task,
    TrainedModel,
};
use featx::models::Checkpoint;
use featx::stability::{estimate_gap, gap_table, GapConfig, GapEstimate};
use featx::{Error, Result};

use crate::config::{DataSource, ExperimentConfig};
use crate::results::{self, summarize, summary_table, CellKey, ResultsRecord};

/// Encodes `input` under `schema`, writing `PREFIX.vocab.txt` and
/// `PREFIX.encoded.txt`. Returns the vocabulary hash.
pub fn encode(input: &Path, schema: &Path, prefix: &Path) -> Result<String> {
    let schema = RawSchema::load(schema)?;
    let table = RawTable::from_csv_path(input)?;
    if table.is_empty() {
        return Err(Error::data(format!("{}: empty table", input.display())));
    }
    let vocab = build_vocabulary(&table, &schema)?;
    let matrix = vocab.encode_table(&table)?;
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let vocab_path = with_suffix(prefix, ".vocab.txt");
    std::fs::write(&vocab_path, vocab.to_text()).map_err(|e| Error::io(&vocab_path, e))?;
    let matrix_path = with_suffix(prefix, ".encoded.txt");
    std::fs::write(&matrix_path, matrix.to_text()).map_err(|e| Error::io(&matrix_path, e))?;
    println!(
        "encoded {} rows into {} features; vocabulary {}",
        matrix.n_rows(),
        matrix.n_cols(),
        vocab.hash()
    );
    Ok(vocab.hash())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Data of an experiment, loaded once per process.
pub enum Prepared {
    Random { task: Task, vocab: FeatureVocabulary },
    Chronological(ChronologicalData),
}

impl Prepared {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let (table, schema) = match &config.source {
            DataSource::Csv { csv, schema } => (RawTable::from_csv_path(csv)?, RawSchema::load(schema)?),
            DataSource::Stream(stream) => (synthetic_stream(stream)?, stream_schema(stream)?),
        };
        if table.is_empty() {
            return Err(Error::data("empty table"));
        }
        match config.split.protocol {
            Protocol::Random => {
                let vocab = build_vocabulary(&table, &schema)?;
                let task = Task::from_vocabulary(&vocab, &table)?;
                Ok(Prepared::Random { task, vocab })
            }
            Protocol::Chronological => Ok(Prepared::Chronological(ChronologicalData::prepare(
                &table,
                &schema,
                config.split.fold_count,
            )?)),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Prepared::Random { task, .. } => task.classes,
            Prepared::Chronological(data) => data.vocab.num_classes(),
        }
    }

    pub fn vocabulary_hash(&self) -> String {
        match self {
            Prepared::Random { vocab, .. } => vocab.hash(),
            Prepared::Chronological(data) => data.vocab.hash(),
        }
    }

    fn metric(&self) -> Metric {
        Metric::for_classes(self.classes())
    }
}

/// One (method, ratio, seed) unit of a sweep; `ratio` is absent under the
/// chronological protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub ratio: Option<f64>,
    pub seed: u64,
}

impl Cell {
    pub fn stem(&self) -> String {
        match self.ratio {
            Some(r) => format!("{}-r{r:.2}-s{}", self.method, self.seed),
            None => format!("{}-s{}", self.method, self.seed),
        }
    }
}

/// Cross product of methods, ratios and seeds in configuration order.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let ratios: Vec<Option<f64>> = match config.split.protocol {
        Protocol::Random => config.ratios.iter().copied().map(Some).collect(),
        Protocol::Chronological => vec![None],
    };
    let mut out = Vec::new();
    for &method in &config.methods {
        for &ratio in &ratios {
            for &seed in &config.seeds {
                out.push(Cell { method, ratio, seed });
            }
        }
    }
    out
}

fn require_ratio(config: &ExperimentConfig, cell: &Cell) -> Result<()> {
    match (config.split.protocol, cell.ratio) {
        (Protocol::Random, None) => Err(Error::invalid("the random protocol needs an observed ratio")),
        (Protocol::Chronological, Some(_)) => {
            Err(Error::invalid("the chronological protocol takes no observed ratio"))
        }
        _ => Ok(()),
    }
}

/// Fits the cell's method.
pub fn train_cell(prepared: &Prepared, config: &ExperimentConfig, settings: &MethodSettings, cell: &Cell) -> Result<TrainedModel> {
    require_ratio(config, cell)?;
    match prepared {
        Prepared::Random { task, .. } => {
            let ratio = cell.ratio.expect("checked above");
            let split = prepare_split(task, &config.split_spec(ratio, cell.seed))?;
            train_method(&split, cell.method, settings, cell.seed)
        }
        Prepared::Chronological(data) => train_chronological(data, cell.method, settings, cell.seed),
    }
}

/// Test records of a fitted model; wall time is filled in by the caller.
pub fn evaluate_cell(prepared: &Prepared, config: &ExperimentConfig, cell: &Cell, model: &TrainedModel) -> Result<Vec<ResultsRecord>> {
    require_ratio(config, cell)?;
    let metric = prepared.metric();
    let record = |test_split: Option<usize>, value: f64| ResultsRecord {
        dataset: config.dataset.clone(),
        method: cell.method.to_string(),
        observed_ratio: cell.ratio,
        test_split,
        seed: cell.seed,
        metric: metric.name().to_string(),
        value: Some(value),
        error: None,
        wall_time_s: 0.0,
    };
    match prepared {
        Prepared::Random { task, .. } => {
            let ratio = cell.ratio.expect("checked above");
            let split = prepare_split(task, &config.split_spec(ratio, cell.seed))?;
            let (value, _) = score(&model.state, &split.test, &model.inference, metric)?;
            Ok(vec![record(None, value)])
        }
        Prepared::Chronological(data) => Ok(score_chronological(data, model)?
            .into_iter()
            .map(|f| record(Some(f.split), f.value))
            .collect()),
    }
}

fn failure_record(config: &ExperimentConfig, prepared: &Prepared, cell: &Cell, err: &Error, wall: f64) -> ResultsRecord {
    ResultsRecord {
        dataset: config.dataset.clone(),
        method: cell.method.to_string(),
        observed_ratio: cell.ratio,
        test_split: None,
        seed: cell.seed,
        metric: prepared.metric().name().to_string(),
        value: None,
        error: Some(err.to_string()),
        wall_time_s: wall,
    }
}

pub fn checkpoint_path(config: &ExperimentConfig, cell: &Cell) -> PathBuf {
    config.output.join("checkpoints").join(format!("{}.ckpt", cell.stem()))
}

fn write_log(path: &Path, model: &TrainedModel) -> Result<()> {
    let text: String = model
        .log
        .iter()
        .map(|r| serde_json::to_string(r).expect("epoch records serialise") + "\n")
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains one cell and writes its checkpoint and epoch log. Returns the checkpoint path.
pub fn train(config: &ExperimentConfig, cell: &Cell) -> Result<PathBuf> {
    let prepared = Prepared::load(config)?;
    let settings = config.settings.resolve(prepared.classes())?;
    let model = train_cell(&prepared, config, &settings, cell)?;
    let path = checkpoint_path(config, cell);
    let dir = path.parent().expect("checkpoint path has a directory");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Checkpoint {
        vocabulary_hash: prepared.vocabulary_hash(),
        state: model.state.clone(),
    }
    .save(&path)?;
    write_log(&dir.join(format!("{}.log.jsonl", cell.stem())), &model)?;
    println!("{}: {} log records, checkpoint {}", cell.stem(), model.log.len(), path.display());
    Ok(path)
}

/// Scores a checkpoint on the cell's test split(s) and appends the records.
pub fn evaluate(config: &ExperimentConfig, cell: &Cell, checkpoint: &Path) -> Result<Vec<ResultsRecord>> {
    let start = Instant::now();
    let prepared = Prepared::load(config)?;
    let settings = config.settings.resolve(prepared.classes())?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.verify_vocabulary(&prepared.vocabulary_hash())?;
    let model = TrainedModel {
        state: ckpt.state,
        log: Vec::new(),
        inference: inference_for(cell.method, &settings),
    };
    let mut records = evaluate_cell(&prepared, config, cell, &model)?;
    let wall = start.elapsed().as_secs_f64();
    records.iter_mut().for_each(|r| r.wall_time_s = wall);
    results::append(&config.results_path(), &records)?;
    for r in &records {
        println!("{}\t{}\t{:.4}", cell.stem(), r.metric, r.value.unwrap_or(f64::NAN));
    }
    Ok(records)
}

/// Outcome counts of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepReport {
    pub ran: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Runs every cell not already completed in the results file, records
/// failures without stopping, then writes `summary.tsv`.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let prepared = Prepared::load(config)?;
    let settings = config.settings.resolve(prepared.classes())?;
    let path = config.results_path();
    let done: BTreeSet<_> = results::load(&path)?
        .iter()
        .filter(|r| r.error.is_none())
        .map(ResultsRecord::cell)
        .collect();
    let mut report = SweepReport::default();
    for cell in cells(config) {
        let key = CellKey {
            dataset: config.dataset.clone(),
            method: cell.method.to_string(),
            ratio_bits: cell.ratio.map(f64::to_bits),
            seed: cell.seed,
        };
        if done.contains(&key) {
            report.skipped += 1;
            continue;
        }
        let start = Instant::now();
        let outcome = train_cell(&prepared, config, &settings, &cell)
            .and_then(|model| evaluate_cell(&prepared, config, &cell, &model));
        let wall = start.elapsed().as_secs_f64();
        let records = match outcome {
            Ok(mut records) => {
                records.iter_mut().for_each(|r| r.wall_time_s = wall);
                report.ran += 1;
                records
            }
            Err(e) => {
                eprintln!("{}: failed: {e}", cell.stem());
                report.failed += 1;
                vec![failure_record(config, &prepared, &cell, &e, wall)]
            }
        };
        results::append(&path, &records)?;
    }
    let table = summary_table(&summarize(&results::load(&path)?));
    let summary = config.output.join("summary.tsv");
    std::fs::write(&summary, &table).map_err(|e| Error::io(&summary, e))?;
    print!("{table}");
    println!(
        "ran {} cells, skipped {} completed, {} failed",
        report.ran, report.skipped, report.failed
    );
    Ok(report)
}

/// Gap estimates for every `k`, printed as a per-seed table plus medians.
pub fn stability(config: &GapConfig, ks: &[usize], output: Option<&Path>) -> Result<Vec<GapEstimate>> {
    if ks.is_empty() {
        return Err(Error::invalid("at least one k is required"));
    }
    for &k in ks {
        config.validate(k)?;
    }
    let estimates = ks.iter().map(|&k| estimate_gap(k, config)).collect::<Result<Vec<_>>>()?;
    let table = gap_table(config.raw_features, &estimates);
    if let Some(path) = output {
        std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    print!("{table}");
    println!("k\tmedian_gap\tmean_gap\tstderr");
    for e in &estimates {
        println!("{}\t{:.6}\t{:.6}\t{:.6}", e.k, e.gap_median, e.gap_mean, e.gap_stderr);
    }
    Ok(estimates)
}
