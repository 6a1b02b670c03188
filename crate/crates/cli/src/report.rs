use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

/// One long-format measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub maze_id: String,
    pub agent_id: String,
    pub metric: String,
    pub value: f64,
    pub trials: usize,
}

impl MetricsRow {
    pub fn new(experiment: &str, maze_id: &str, agent_id: &str, metric: &str, value: f64, trials: usize) -> Self {
        Self {
            experiment: experiment.into(),
            maze_id: maze_id.into(),
            agent_id: agent_id.into(),
            metric: metric.into(),
            value,
            trials,
        }
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    write_text(path, &text)
}

/// Writes `header` and `records` as CSV.
pub fn write_csv(path: &Path, header: &[String], records: &[Vec<String>]) -> Result<()> {
    let fail = |e: csv::Error| CliError::format(path, e);
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for r in records {
        w.write_record(r).map_err(fail)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fail = |e: csv::Error| CliError::format(path, e);
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(CliError::io(path))
}

/// Like [`write_rows`] but emits the header even with no rows.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if rows.is_empty() {
        return write_text(path, "experiment,maze_id,agent_id,metric,value,trials\n");
    }
    write_rows(path, rows)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}
