//! Minimal CSV emission and parsing.
//!
//! Every CSV the harness writes goes through `CsvTable`, and every schema
//! round-trips through `parse`: header plus rows of unquoted fields (no
//! field the harness emits contains commas or newlines).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.render())
            .map_err(|source| Error::Io { path: path.display().to_string(), source })
    }

    pub fn parse(text: &str) -> Result<CsvTable> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format {
            path: "<csv>".into(),
            line: None,
            msg: "empty csv".into(),
        })?;
        let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if row.len() != columns.len() {
                return Err(Error::Format {
                    path: "<csv>".into(),
                    line: Some(i + 2),
                    msg: format!("{} fields, header has {}", row.len(), columns.len()),
                });
            }
            rows.push(row);
        }
        Ok(CsvTable { columns, rows })
    }

    /// Column index by name.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::Format {
            path: "<csv>".into(),
            line: None,
            msg: format!("no column '{name}'"),
        })
    }
}

/// Canonical float rendering: shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}
