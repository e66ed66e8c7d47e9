use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub epoch: u64,
    pub term: String,
    pub value: f64,
}

/// Per-step loss terms; serialized as CSV with columns `step,epoch,term,value`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricRow>,
}

pub const CSV_HEADER: &str = "step,epoch,term,value";

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, epoch: u64, term: &str, value: f64) {
        self.rows.push(MetricRow {
            step,
            epoch,
            term: term.to_string(),
            value,
        });
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of one term in step order.
    pub fn series(&self, term: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.term == term).map(|r| r.value).collect()
    }

    pub fn last(&self, term: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.term == term).map(|r| r.value)
    }

    /// Rows only, no header. Values use the shortest exact decimal form.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:?}", r.step, r.epoch, r.term, r.value);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    /// Appends to `path`, writing the header when the file is new or empty.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str(CSV_HEADER);
            text.push('\n');
        }
        text.push_str(&self.csv_rows());
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
