use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::{ColumnKind, EncodedMatrix, RawSchema, RawTable};
use crate::error::{Error, Result};

/// Display value of the shared index of grouped rare values.
pub const RARE_LABEL: &str = "<rare>";
const VOCAB_MAGIC: &str = "# featx-vocabulary v1";

/// Standardisation and equal-width bucket edges fitted on one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStats {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_buckets: usize,
}

impl ContinuousStats {
    pub fn fit(values: &[f64], n_buckets: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data("cannot discretize an empty column"));
        }
        if n_buckets == 0 {
            return Err(Error::invalid("n_buckets must be positive"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite value in continuous column"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let mut stats = ContinuousStats {
            mean,
            std,
            lo: 0.0,
            hi: 0.0,
            n_buckets,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            let z = stats.standardize(v);
            lo = lo.min(z);
            hi = hi.max(z);
        }
        stats.lo = lo;
        stats.hi = hi;
        Ok(stats)
    }

    pub fn standardize(&self, v: f64) -> f64 {
        if self.std > 0.0 {
            (v - self.mean) / self.std
        } else {
            0.0
        }
    }

    /// Bucket of a raw value; values outside the fitted range clamp to the end buckets.
    pub fn bucket(&self, v: f64) -> usize {
        if self.hi <= self.lo {
            return 0;
        }
        let z = self.standardize(v);
        let pos = ((z - self.lo) / (self.hi - self.lo) * self.n_buckets as f64).floor();
        if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.n_buckets - 1)
        }
    }
}

/// Standardises `values` and maps them to `n_buckets` equal-width buckets over
/// the standardised range.
pub fn discretize_continuous(values: &[f64], n_buckets: usize) -> Result<Vec<usize>> {
    let stats = ContinuousStats::fit(values, n_buckets)?;
    Ok(values.iter().map(|&v| stats.bucket(v)).collect())
}

/// Local index remapping produced by rare-value grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable {
    /// New local index for each original local index.
    pub map: Vec<usize>,
    pub size: usize,
    /// Shared index of the grouped values, if any value was rare.
    pub rare_index: Option<usize>,
}

/// Collapses all values seen fewer than `min_count` times into one shared index.
/// The shared index takes the position of the first rare value.
pub fn group_rare_features(counts: &[usize], min_count: usize) -> RemapTable {
    let mut map = Vec::with_capacity(counts.len());
    let mut rare_index = None;
    let mut next = 0;
    for &c in counts {
        if c < min_count {
            let idx = *rare_index.get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            map.push(idx);
        } else {
            map.push(next);
            next += 1;
        }
    }
    RemapTable {
        map,
        size: next,
        rare_index,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    Categorical {
        labels: Vec<String>,
        lookup: HashMap<String, usize>,
    },
    Continuous(ContinuousStats),
}

/// One raw feature's slice of the global index space.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabBlock {
    pub name: String,
    pub column: usize,
    pub kind: BlockKind,
    pub rare_bucket: Option<usize>,
}

impl VocabBlock {
    pub fn size(&self) -> usize {
        match &self.kind {
            BlockKind::Categorical { labels, .. } => labels.len(),
            BlockKind::Continuous(s) => s.n_buckets,
        }
    }

    fn label(&self, local: usize) -> String {
        match &self.kind {
            BlockKind::Categorical { labels, .. } => labels[local].clone(),
            BlockKind::Continuous(_) => format!("bucket:{local}"),
        }
    }

    /// Local index of a raw string value, or `None` for an unseen category.
    fn local(&self, raw: &str) -> Result<Option<usize>> {
        match &self.kind {
            BlockKind::Categorical { lookup, .. } => Ok(lookup.get(raw).copied()),
            BlockKind::Continuous(s) => {
                let v = parse_number(raw, &self.name)?;
                Ok(Some(s.bucket(v)))
            }
        }
    }
}

fn parse_number(raw: &str, column: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::data(format!("non-numeric value `{raw}` in continuous column `{column}`")))?;
    if !v.is_finite() {
        return Err(Error::data(format!("non-finite value in continuous column `{column}`")));
    }
    Ok(v)
}

/// Options controlling vocabulary construction.
#[derive(Debug, Clone, Default)]
pub struct VocabularyOptions<'a> {
    /// Values occurring fewer times are grouped per block. `None` disables grouping.
    pub rare_min_count: Option<usize>,
    /// Rows used to fit continuous statistics; all rows when `None`.
    pub continuous_fit_rows: Option<&'a [usize]>,
}

/// Mapping from (raw feature, value) pairs to global 0-1 feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVocabulary {
    blocks: Vec<VocabBlock>,
    offsets: Vec<usize>,
    label_name: String,
    label_column: usize,
    classes: Vec<String>,
}

/// Builds a vocabulary over every row of `table`.
pub fn build_vocabulary(table: &RawTable, schema: &RawSchema) -> Result<FeatureVocabulary> {
    build_vocabulary_with(table, schema, &VocabularyOptions::default())
}

pub fn build_vocabulary_with(
    table: &RawTable,
    schema: &RawSchema,
    options: &VocabularyOptions<'_>,
) -> Result<FeatureVocabulary> {
    if table.is_empty() {
        return Err(Error::data("empty table"));
    }
    for h in table.header() {
        if schema.kind_of(h).is_none() {
            return Err(Error::invalid(format!("column `{h}` is not declared in the schema")));
        }
    }
    let column = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| Error::data(format!("schema column `{name}` missing from table header")))
    };
    let mut blocks = Vec::new();
    for spec in schema.feature_columns() {
        let col = column(&spec.name)?;
        let block = match spec.kind {
            ColumnKind::Categorical => {
                let mut order: Vec<&str> = Vec::new();
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for row in table.rows() {
                    let v = row[col].as_str();
                    let c = counts.entry(v).or_insert(0);
                    if *c == 0 {
                        order.push(v);
                    }
                    *c += 1;
                }
                let value_counts: Vec<usize> = order.iter().map(|v| counts[v]).collect();
                let remap = match options.rare_min_count {
                    Some(min) => group_rare_features(&value_counts, min),
                    None => group_rare_features(&value_counts, 0),
                };
                let mut labels = vec![String::new(); remap.size];
                let mut lookup = HashMap::with_capacity(order.len());
                for (k, v) in order.iter().enumerate() {
                    let local = remap.map[k];
                    labels[local] = if Some(local) == remap.rare_index {
                        RARE_LABEL.to_string()
                    } else {
                        (*v).to_string()
                    };
                    lookup.insert((*v).to_string(), local);
                }
                VocabBlock {
                    name: spec.name.clone(),
                    column: col,
                    kind: BlockKind::Categorical { labels, lookup },
                    rare_bucket: remap.rare_index,
                }
            }
            ColumnKind::Continuous => {
                let all: Vec<usize>;
                let rows = match options.continuous_fit_rows {
                    Some(r) => r,
                    None => {
                        all = (0..table.len()).collect();
                        &all
                    }
                };
                let values = rows
                    .iter()
                    .map(|&i| parse_number(&table.rows()[i][col], &spec.name))
                    .collect::<Result<Vec<f64>>>()?;
                // Every row must parse, not only the fitted ones.
                for row in table.rows() {
                    parse_number(&row[col], &spec.name)?;
                }
                VocabBlock {
                    name: spec.name.clone(),
                    column: col,
                    kind: BlockKind::Continuous(ContinuousStats::fit(&values, schema.n_buckets())?),
                    rare_bucket: None,
                }
            }
            ColumnKind::Label => unreachable!("feature_columns skips the label"),
        };
        blocks.push(block);
    }
    let mut offsets = Vec::with_capacity(blocks.len() + 1);
    offsets.push(0);
    for b in &blocks {
        offsets.push(offsets.last().copied().unwrap_or(0) + b.size());
    }
    let label_column = column(schema.label_name())?;
    let mut classes: Vec<String> = table.rows().iter().map(|r| r[label_column].clone()).collect();
    classes.sort();
    classes.dedup();
    Ok(FeatureVocabulary {
        blocks,
        offsets,
        label_name: schema.label_name().to_string(),
        label_column,
        classes,
    })
}

impl FeatureVocabulary {
    /// Number of raw features `d`.
    pub fn raw_count(&self) -> usize {
        self.blocks.len()
    }

    /// Number of 0-1 features `D`.
    pub fn total(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn blocks(&self) -> &[VocabBlock] {
        &self.blocks
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.blocks.iter().map(VocabBlock::size).collect()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Raw feature owning a known global index.
    pub fn block_of(&self, global: usize) -> Option<usize> {
        if global >= self.total() {
            return None;
        }
        Some(self.offsets.partition_point(|&o| o <= global) - 1)
    }

    /// Global index ranges grouped by raw feature.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.offsets.windows(2).map(|w| w[0]..w[1]).collect()
    }

    /// `(raw feature name, value or bucket label)` of a known global index.
    pub fn decode(&self, global: usize) -> Option<(&str, String)> {
        let m = self.block_of(global)?;
        let b = &self.blocks[m];
        Some((b.name.as_str(), b.label(global - self.offsets[m])))
    }

    pub fn label_of(&self, row: &[String]) -> Result<usize> {
        let raw = &row[self.label_column];
        self.classes
            .binary_search(raw)
            .map_err(|_| Error::data(format!("unseen label `{raw}` in column `{}`", self.label_name)))
    }

    /// Sorted global indices of a row; unseen categorical values are an error.
    pub fn one_hot(&self, row: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for (m, b) in self.blocks.iter().enumerate() {
            let raw = &row[b.column];
            let local = b.local(raw)?.ok_or_else(|| {
                Error::data(format!("unseen value `{raw}` for raw feature `{}`", b.name))
            })?;
            out.push(self.offsets[m] + local);
        }
        Ok(out)
    }

    pub fn encode_table(&self, table: &RawTable) -> Result<EncodedMatrix> {
        let mut rows = Vec::with_capacity(table.len());
        let mut labels = Vec::with_capacity(table.len());
        for r in table.rows() {
            rows.push(self.one_hot(r)?);
            labels.push(self.label_of(r)?);
        }
        EncodedMatrix::new(self.total(), rows, labels)
    }

    /// Versioned text form: header comments, continuous statistics, then one
    /// `global_index<TAB>raw_feature<TAB>value` line per index.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_MAGIC}");
        let _ = writeln!(s, "# label\t{}\t{}", self.label_name, self.classes.join("\t"));
        for b in &self.blocks {
            if let BlockKind::Continuous(st) = &b.kind {
                let _ = writeln!(
                    s,
                    "# continuous\t{}\t{:e}\t{:e}\t{:e}\t{:e}\t{}",
                    b.name, st.mean, st.std, st.lo, st.hi, st.n_buckets
                );
            }
        }
        for g in 0..self.total() {
            if let Some((name, label)) = self.decode(g) {
                let _ = writeln!(s, "{g}\t{name}\t{label}");
            }
        }
        s
    }

    /// Hex SHA-256 of [`FeatureVocabulary::to_text`].
    pub fn hash(&self) -> String {
        hex_digest(self.to_text().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Allocator of fresh global indices for categorical values unseen in training.
///
/// Existing assignments never change; new indices start at the training `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExpansion {
    base: usize,
    assigned: HashMap<(usize, String), usize>,
    entries: Vec<(usize, String)>,
}

impl FeatureExpansion {
    pub fn new(vocab: &FeatureVocabulary) -> Self {
        FeatureExpansion {
            base: vocab.total(),
            assigned: HashMap::new(),
            entries: Vec::new(),
        }
    }

    /// Training `D` plus every index allocated so far.
    pub fn total(&self) -> usize {
        self.base + self.entries.len()
    }

    pub fn new_count(&self) -> usize {
        self.entries.len()
    }

    /// Raw feature block and raw value of an allocated index.
    pub fn entry(&self, global: usize) -> Option<(usize, &str)> {
        let k = global.checked_sub(self.base)?;
        self.entries.get(k).map(|(m, v)| (*m, v.as_str()))
    }

    pub fn one_hot(&mut self, vocab: &FeatureVocabulary, row: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(vocab.raw_count());
        for (m, b) in vocab.blocks.iter().enumerate() {
            let raw = &row[b.column];
            match b.local(raw)? {
                Some(local) => out.push(vocab.offsets[m] + local),
                None => {
                    let key = (m, raw.clone());
                    let idx = match self.assigned.get(&key) {
                        Some(&i) => i,
                        None => {
                            let i = self.total();
                            self.assigned.insert(key.clone(), i);
                            self.entries.push(key);
                            i
                        }
                    };
                    out.push(idx);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Encodes rows in order, allocating indices for unseen values. The column
    /// count of the result is the running total after this table.
    pub fn encode_table(&mut self, vocab: &FeatureVocabulary, table: &RawTable) -> Result<EncodedMatrix> {
        let mut rows = Vec::with_capacity(table.len());
        let mut labels = Vec::with_capacity(table.len());
        for r in table.rows() {
            rows.push(self.one_hot(vocab, r)?);
            labels.push(vocab.label_of(r)?);
        }
        EncodedMatrix::new(self.total(), rows, labels)
    }
}
