use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// A result that renders as JSON for machines and an aligned table for people.
pub trait Report: Serialize {
    fn to_text(&self) -> String;
}

/// Writes `<stem>.json` (the report plus the run configuration) and
/// `<stem>.txt`. Returns both paths.
pub fn write_report<R: Report>(dir: &Path, stem: &str, report: &R, config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    #[derive(Serialize)]
    struct Envelope<'a, R> {
        config: &'a RunConfig,
        report: &'a R,
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join(format!("{stem}.json"));
    let text_path = dir.join(format!("{stem}.txt"));
    let json = serde_json::to_string_pretty(&Envelope { config, report })?;
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    std::fs::write(&text_path, report.to_text()).map_err(|e| Error::io(&text_path, e))?;
    Ok((json_path, text_path))
}

/// Plain-text table with left-aligned, space-padded columns.
#[derive(Debug, Clone)]
pub struct TextTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.rows.push(cells.to_vec());
    }

    pub fn render(&self) -> String {
        let n = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(n) {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, w) in widths.iter().enumerate() {
                let c = cells.get(i).map(String::as_str).unwrap_or("");
                if i + 1 == n {
                    s.push_str(c);
                } else {
                    s.push_str(&format!("{c:<w$}  "));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}
