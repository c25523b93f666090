//! CSV tables and JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::CliError;

/// A table whose first column is always `config_hash`.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        let mut cols = vec!["config_hash".to_string()];
        cols.extend(columns.iter().map(|c| c.to_string()));
        Self { columns: cols, rows: Vec::new() }
    }

    /// Appends a row; `hash` fills the first column.
    pub fn push(&mut self, hash: &str, cells: Vec<String>) {
        debug_assert_eq!(cells.len() + 1, self.columns.len());
        let mut row = vec![hash.to_string()];
        row.extend(cells);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}

/// Shortest round-trip decimal form; `inf`/`NaN` spelled out.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    subcommand: &'a str,
    config_hash: &'a str,
    artifact: &'a str,
    config: &'a ExperimentConfig,
    summary: &'a Value,
}

/// Writes `<name>-<hash>.<ext>` and its `.json` sidecar into `dir`.
pub fn write_artifact(
    dir: &Path,
    subcommand: &str,
    cfg: &ExperimentConfig,
    ext: &str,
    body: &str,
    summary: &Value,
) -> Result<(PathBuf, PathBuf), CliError> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let stem = format!("{subcommand}-{hash}");
    let artifact = dir.join(format!("{stem}.{ext}"));
    fs::write(&artifact, body)?;
    let sidecar = dir.join(format!("{stem}.json"));
    let name = artifact.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    let meta = Sidecar { subcommand, config_hash: &hash, artifact: name, config: cfg, summary };
    let mut json = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    json.push('\n');
    fs::write(&sidecar, json)?;
    Ok((artifact, sidecar))
}
