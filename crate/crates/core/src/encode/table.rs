use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Raw string records with a header, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    origin: PathBuf,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let table = RawTable {
            header,
            rows,
            origin: PathBuf::from("<memory>"),
        };
        for (i, r) in table.rows.iter().enumerate() {
            table.check_row(r, i + 2)?;
        }
        Ok(table)
    }

    fn check_row(&self, row: &[String], line: usize) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Parse {
                path: self.origin.clone(),
                line,
                message: format!("expected {} fields, found {}", self.header.len(), row.len()),
            });
        }
        if let Some(c) = row.iter().position(|v| v.trim().is_empty()) {
            return Err(Error::Parse {
                path: self.origin.clone(),
                line,
                message: format!("missing value in column `{}`", self.header[c]),
            });
        }
        Ok(())
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse_err = |e: csv::Error| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.to_string(),
            }
        };
        let header: Vec<String> = rdr
            .headers()
            .map_err(parse_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut table = RawTable {
            header,
            rows: Vec::new(),
            origin: origin.to_path_buf(),
        };
        for rec in rdr.records() {
            let rec = rec.map_err(parse_err)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row: Vec<String> = rec.iter().map(str::to_string).collect();
            table.check_row(&row, line)?;
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(std::io::BufReader::new(file), path)
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Table restricted to the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> RawTable {
        RawTable {
            header: self.header.clone(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
            origin: self.origin.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_line_of_bad_arity() {
        let csv = "a,b,y\n1,2,x\n3,y\n";
        match RawTable::from_csv_reader(csv.as_bytes(), Path::new("t.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_values() {
        let csv = "a,y\n,x\n";
        assert!(RawTable::from_csv_reader(csv.as_bytes(), Path::new("t.csv")).is_err());
    }
}
