use std::fmt;
use std::path::Path;

use mlv_core::metrics::METRICS_HEADER;

use crate::error::{CliError, Result};
use crate::run::METRICS_FILE;

/// One metric in both runs. Per-index rows are named `record[index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

impl MetricRow {
    /// `b − a` when both runs have the metric.
    pub fn delta(&self) -> Option<f64> {
        Some(self.b? - self.a?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<MetricRow>,
}

impl Comparison {
    pub fn get(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Reads `metrics.csv` as ordered `(name, value)` pairs.
pub fn read_metrics(path: &Path) -> Result<Vec<(String, f64)>> {
    let malformed = |message: String| CliError::Metrics {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => malformed(format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != METRICS_HEADER {
        return Err(malformed(format!(
            "expected header '{METRICS_HEADER}', got '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let line = i + 2;
        if record.len() != 3 {
            return Err(malformed(format!(
                "line {line}: expected 3 fields, got {}",
                record.len()
            )));
        }
        let value: f64 = record[2]
            .parse()
            .map_err(|e| malformed(format!("line {line}: value '{}': {e}", &record[2])))?;
        let name = if record[1].is_empty() {
            record[0].to_owned()
        } else {
            format!("{}[{}]", &record[0], &record[1])
        };
        rows.push((name, value));
    }
    Ok(rows)
}

/// Side-by-side metric summary of two run directories, deltas as `b − a`.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    let a = read_metrics(&dir_a.join(METRICS_FILE))?;
    let b = read_metrics(&dir_b.join(METRICS_FILE))?;
    let mut rows: Vec<MetricRow> = a
        .iter()
        .map(|(name, v)| MetricRow {
            name: name.clone(),
            a: Some(*v),
            b: None,
        })
        .collect();
    for (name, v) in b {
        match rows.iter_mut().find(|r| r.name == name) {
            Some(row) => row.b = Some(v),
            None => rows.push(MetricRow {
                name,
                a: None,
                b: Some(v),
            }),
        }
    }
    Ok(Comparison { rows })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.6e}"));
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(6)
            .max(6);
        writeln!(
            f,
            "{:<width$}  {:>13}  {:>13}  {:>13}",
            "metric", "a", "b", "b - a"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>13}  {:>13}  {:>13}",
                r.name,
                cell(r.a),
                cell(r.b),
                cell(r.delta())
            )?;
        }
        Ok(())
    }
}
