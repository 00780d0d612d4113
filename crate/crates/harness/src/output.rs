//! JSON documents and flat CSV tables.

use std::path::Path;

use serde::Serialize;

use crate::error::{io_err, Result};
use crate::experiment::{ExperimentResult, SampleRecord};

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub const RECORD_COLUMNS: [&str; 12] = [
    "fold",
    "index",
    "label",
    "target",
    "mode",
    "perturbation",
    "perturbed_prediction",
    "perturbed_target",
    "flagged",
    "cf_cost",
    "distance",
    "skip_reason",
];

/// One row per (sample, mode, perturbation) in `RECORD_COLUMNS` order.
pub fn write_records_csv(records: &[SampleRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.fold.to_string(),
            r.index.to_string(),
            r.label.to_string(),
            r.target.to_string(),
            r.mode.name().to_string(),
            r.perturbation_name(),
            r.perturbed_prediction.to_string(),
            r.perturbed_target.to_string(),
            r.flagged.to_string(),
            opt(r.cf_cost),
            opt(r.distance),
            r.skip_reason.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Plot data: one row per (mode, perturbation).
pub fn write_aggregates_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "perturbation", "masked", "median", "mean", "count", "skipped", "flagged"])?;
    for a in &result.aggregates {
        w.write_record([
            a.mode.name().to_string(),
            a.masked.map_or("noise".into(), |k| format!("mask:{k}")),
            a.masked.map_or_else(String::new, |k| k.to_string()),
            opt(a.median),
            opt(a.mean),
            a.count.to_string(),
            a.skipped.to_string(),
            a.flagged.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// `result.json`, `records.csv` and `aggregates.csv` under `dir`.
pub fn write_experiment(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(result, &dir.join("result.json"))?;
    write_records_csv(&result.records, &dir.join("records.csv"))?;
    write_aggregates_csv(result, &dir.join("aggregates.csv"))
}
