//! CSV records and per-group summaries.

use crate::HarnessError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// One row of the detail file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub algo: String,
    /// Realization index (RNG stream under the master seed).
    pub seed: u64,
    pub sweep_var: String,
    pub sweep_value: f64,
    /// `"<outer>/<covariance|phase>"`, `"0/init"`, `"final"` or `"table"`.
    pub subiter: String,
    pub objective_bits: Option<f64>,
    pub wall_ms: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[serde(rename = "I")]
    pub i: Option<f64>,
    #[serde(rename = "I_S")]
    pub i_s: Option<f64>,
    #[serde(rename = "I_Theta")]
    pub i_theta: Option<f64>,
    pub predicted_mults: Option<u64>,
}

/// Mean and standard error of one group of detail rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub algo: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub subiter: String,
    pub count: usize,
    pub mean_objective_bits: f64,
    pub stderr_objective_bits: f64,
    pub mean_wall_ms: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "experiment",
    "algo",
    "sweep_var",
    "sweep_value",
    "subiter",
    "count",
    "mean_objective_bits",
    "stderr_objective_bits",
    "mean_wall_ms",
];

/// Groups rows by everything except the realization and averages the
/// objective. Rows without an objective are skipped. Groups appear in the
/// order of their first row.
pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    type Key = (String, String, String, u64, String);
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut groups: Vec<(Key, f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in records {
        let Some(obj) = r.objective_bits else { continue };
        let key = (
            r.experiment.clone(),
            r.algo.clone(),
            r.sweep_var.clone(),
            r.sweep_value.to_bits(),
            r.subiter.clone(),
        );
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, r.sweep_value, Vec::new(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].2.push(obj);
        if let Some(w) = r.wall_ms {
            groups[slot].3.push(w);
        }
    }
    groups
        .into_iter()
        .map(|((experiment, algo, sweep_var, _, subiter), sweep_value, obj, wall)| {
            let (mean, stderr) = mean_stderr(&obj);
            SummaryRow {
                experiment,
                algo,
                sweep_var,
                sweep_value,
                subiter,
                count: obj.len(),
                mean_objective_bits: mean,
                stderr_objective_bits: stderr,
                mean_wall_ms: (!wall.is_empty()).then(|| wall.iter().sum::<f64>() / wall.len() as f64),
            }
        })
        .collect()
}

/// Sample mean and standard error (0 for fewer than two samples).
pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Writes `<stem>.csv` and `<stem>_summary.csv` into `dir`.
pub fn emit_results(records: &[Record], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    std::fs::create_dir_all(dir)?;
    let detail = dir.join(format!("{stem}.csv"));
    let summary = dir.join(format!("{stem}_summary.csv"));
    let mut w = csv::Writer::from_path(&detail)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    let rows = summarize(records);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&summary)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok((detail, summary))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}
