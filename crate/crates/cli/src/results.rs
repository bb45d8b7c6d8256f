//! Line-delimited results records.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use featx::{Error, Result};
use serde::{Deserialize, Serialize};

/// One metric value of one (method, seed, split) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub dataset: String,
    pub method: String,
    /// Random protocol only.
    pub observed_ratio: Option<f64>,
    /// Chronological protocol only: 1-based test split.
    pub test_split: Option<usize>,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
    /// Set when the cell failed; `value` is then absent.
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl ResultsRecord {
    /// Identity of the cell this record belongs to.
    pub fn cell(&self) -> CellKey {
        CellKey {
            dataset: self.dataset.clone(),
            method: self.method.clone(),
            ratio_bits: self.observed_ratio.map(f64::to_bits),
            seed: self.seed,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("records serialise");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub dataset: String,
    pub method: String,
    pub ratio_bits: Option<u64>,
    pub seed: u64,
}

/// Appends the records of one cell with a single write, so readers never see
/// a partial line or a partial cell.
pub fn append(path: &Path, records: &[ResultsRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let block: String = records.iter().map(ResultsRecord::to_line).collect();
    file.write_all(block.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Every record of a results file; a missing file holds none.
pub fn load(path: &Path) -> Result<Vec<ResultsRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Mean and sample standard deviation of the successful values of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    /// `r=0.30` or `T3`.
    pub split: String,
    pub metric: String,
    pub count: usize,
    pub failed: usize,
    pub mean: f64,
    pub std: f64,
}

fn split_label(r: &ResultsRecord) -> String {
    match (r.observed_ratio, r.test_split) {
        (Some(ratio), _) => format!("r={ratio:.2}"),
        (None, Some(t)) => format!("T{t}"),
        (None, None) => "-".to_string(),
    }
}

/// Drops failure records of cells that later succeeded.
pub fn latest(records: &[ResultsRecord]) -> Vec<ResultsRecord> {
    let succeeded: std::collections::BTreeSet<CellKey> =
        records.iter().filter(|r| r.error.is_none()).map(ResultsRecord::cell).collect();
    records
        .iter()
        .filter(|r| r.error.is_none() || !succeeded.contains(&r.cell()))
        .cloned()
        .collect()
}

/// Groups records by (method, split) in first-appearance order of methods.
pub fn summarize(records: &[ResultsRecord]) -> Vec<SummaryRow> {
    let records = latest(records);
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, String), (String, Vec<f64>, usize)> = BTreeMap::new();
    for r in &records {
        let m = match order.iter().position(|m| *m == r.method) {
            Some(i) => i,
            None => {
                order.push(r.method.clone());
                order.len() - 1
            }
        };
        let entry = groups
            .entry((m, split_label(r)))
            .or_insert_with(|| (r.metric.clone(), Vec::new(), 0));
        match r.value {
            Some(v) => entry.1.push(v),
            None => entry.2 += 1,
        }
    }
    groups
        .into_iter()
        .map(|((m, split), (metric, values, failed))| {
            let n = values.len();
            let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                method: order[m].clone(),
                split,
                metric,
                count: n,
                failed,
                mean,
                std,
            }
        })
        .collect()
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method\tsplit\tmetric\tn\tfailed\tmean\tstd\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\n",
            r.method, r.split, r.metric, r.count, r.failed, r.mean, r.std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: &str, seed: u64, value: Option<f64>) -> ResultsRecord {
        ResultsRecord {
            dataset: "d".into(),
            method: method.into(),
            observed_ratio: Some(0.5),
            test_split: None,
            seed,
            metric: "accuracy".into(),
            value,
            error: value.is_none().then(|| "boom".to_string()),
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn five_seeds_one_summary() {
        let recs: Vec<_> = (0..5).map(|s| record("base", s, Some(s as f64))).collect();
        let rows = summarize(&recs);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].count, 5);
        assert_eq!(rows[0].mean, 2.0);
        assert!((rows[0].std - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn failures_are_counted_apart() {
        let rows = summarize(&[record("knn", 0, Some(0.5)), record("knn", 1, None)]);
        assert_eq!((rows[0].count, rows[0].failed), (1, 1));
    }

    #[test]
    fn append_then_load() {
        let dir = std::env::temp_dir().join(format!("featx-results-{}", std::process::id()));
        let path = dir.join("r.jsonl");
        let _ = std::fs::remove_file(&path);
        let recs = vec![record("base", 0, Some(0.25)), record("fate", 0, None)];
        append(&path, &recs[..1]).unwrap();
        append(&path, &recs[1..]).unwrap();
        assert_eq!(load(&path).unwrap(), recs);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
