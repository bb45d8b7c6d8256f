use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column declarations for a raw table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSchema {
    columns: Vec<ColumnSpec>,
    n_buckets: usize,
}

pub const DEFAULT_BUCKETS: usize = 10;

impl RawSchema {
    pub fn new(columns: Vec<ColumnSpec>, n_buckets: usize) -> Result<Self> {
        let labels = columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::invalid(format!(
                "schema needs exactly one label column, found {labels}"
            )));
        }
        if columns.len() < 2 {
            return Err(Error::invalid("schema needs at least one feature column"));
        }
        if n_buckets < 2 {
            return Err(Error::invalid("n_buckets must be at least 2"));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::invalid(format!("column `{}` declared twice", c.name)));
            }
        }
        Ok(RawSchema { columns, n_buckets })
    }

    /// Parses `name = categorical|continuous|label` lines. Blank lines and `#`
    /// comments are skipped; the reserved key `n_buckets` sets the bucket count.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut columns = Vec::new();
        let mut n_buckets = DEFAULT_BUCKETS;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (name, kind) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `name = kind`, got `{line}`")))?;
            let (name, kind) = (name.trim(), kind.trim());
            if name == "n_buckets" {
                n_buckets = kind
                    .parse()
                    .map_err(|_| err(format!("invalid bucket count `{kind}`")))?;
                continue;
            }
            let kind = match kind {
                "categorical" => ColumnKind::Categorical,
                "continuous" => ColumnKind::Continuous,
                "label" => ColumnKind::Label,
                other => return Err(err(format!("unknown column kind `{other}`"))),
            };
            columns.push(ColumnSpec {
                name: name.to_string(),
                kind,
            });
        }
        Self::new(columns, n_buckets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.kind)
    }

    pub fn label_name(&self) -> &str {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .map(|c| c.name.as_str())
            .unwrap_or_default()
    }

    /// Feature columns in declaration order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_buckets() {
        let s = RawSchema::parse(
            "# toy\nage = continuous\ncolor = categorical  # note\n\nn_buckets = 4\ny = label\n",
            Path::new("toy.schema"),
        )
        .unwrap();
        assert_eq!(s.columns().len(), 3);
        assert_eq!(s.n_buckets(), 4);
        assert_eq!(s.label_name(), "y");
    }

    #[test]
    fn rejects_missing_label_and_bad_kind() {
        let p = Path::new("s");
        assert!(RawSchema::parse("a = categorical\n", p).is_err());
        match RawSchema::parse("a = categorical\nb = text\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
