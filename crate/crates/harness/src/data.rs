//! Dataset ingestion, synthetic blobs and cross-validation splits.

use std::collections::BTreeMap;
use std::path::Path;

use cfrobust_core::rng::stream_rng;
use cfrobust_core::{Dataset, LabeledSample, Vector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

/// A CSV file turned into a dataset, with what was lost on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// Original label spelling of each class index.
    pub label_names: Vec<String>,
    /// Rows skipped because a feature was NaN or infinite.
    pub dropped_rows: usize,
}

/// Reads a headed CSV whose last column is the label.
///
/// Labels are re-indexed densely: numerically when every label is an
/// integer, lexicographically otherwise.
pub fn load_csv(path: &Path) -> Result<LoadedCsv> {
    let bad = |reason: String| HarnessError::Data {
        path: path.display().to_string(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(bad("need at least one feature column and a label column".into()));
    }
    let d = header.len() - 1;
    let feature_names: Vec<String> = header.iter().take(d).map(str::to_string).collect();

    let mut rows: Vec<(Vector, String)> = Vec::new();
    let mut dropped = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut values = Vec::with_capacity(d);
        for (j, field) in rec.iter().take(d).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                bad(format!(
                    "row {}: column {:?} is not numeric: {field:?}",
                    line + 1,
                    feature_names[j]
                ))
            })?;
            values.push(v);
        }
        if values.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        rows.push((Vector::from_vec(values), rec[d].to_string()));
    }
    if rows.is_empty() {
        return Err(bad("no usable rows".into()));
    }

    let label_names = label_order(rows.iter().map(|(_, l)| l.as_str()));
    let index: BTreeMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let samples = rows
        .iter()
        .map(|(x, l)| LabeledSample::new(x.clone(), index[l.as_str()]))
        .collect::<cfrobust_core::Result<Vec<_>>>()?;
    let dataset = Dataset::new(samples, feature_names, label_names.len())?;
    Ok(LoadedCsv {
        dataset,
        label_names,
        dropped_rows: dropped,
    })
}

fn label_order<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut unique: Vec<&str> = labels.collect();
    unique.sort_unstable();
    unique.dedup();
    let numeric: Option<Vec<i64>> = unique.iter().map(|l| l.parse().ok()).collect();
    match numeric {
        Some(mut n) => {
            n.sort_unstable();
            n.dedup();
            n.iter().map(i64::to_string).collect()
        }
        None => unique.into_iter().map(str::to_string).collect(),
    }
}

/// Writes a dataset in the format `load_csv` reads, labels as class indices.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for s in &data.samples {
        let mut row: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Two isotropic unit-variance Gaussian classes with means `∓(separation/2)·e₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub d: usize,
    pub n_per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

pub fn make_blobs(spec: &BlobsSpec) -> Result<Dataset> {
    if spec.d == 0 || spec.n_per_class == 0 {
        return Err(HarnessError::Config(
            "blobs need d >= 1 and at least one sample per class".into(),
        ));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(HarnessError::Config("blob separation must be finite and >= 0".into()));
    }
    let mut samples = Vec::with_capacity(2 * spec.n_per_class);
    for label in 0..2 {
        let mut rng = stream_rng(spec.seed, label as u64);
        let shift = if label == 0 { -0.5 } else { 0.5 } * spec.separation;
        for _ in 0..spec.n_per_class {
            let mut x = Vector::from_fn(spec.d, |_, _| StandardNormal.sample(&mut rng));
            x[0] += shift;
            samples.push(LabeledSample::new(x, label)?);
        }
    }
    Ok(Dataset::new(samples, vec![], 2)?)
}

/// Test indices of each fold. With `stratify`, every class is shuffled and
/// dealt round-robin so class proportions match across folds.
pub fn kfold_indices(data: &Dataset, k: usize, stratify: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(HarnessError::Config(format!("need at least 2 folds, got {k}")));
    }
    if data.len() < k {
        return Err(HarnessError::Config(format!(
            "{} samples cannot fill {k} folds",
            data.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let groups: Vec<Vec<usize>> = if stratify {
        (0..data.n_classes)
            .map(|c| (0..data.len()).filter(|&i| data.samples[i].label == c).collect())
            .collect()
    } else {
        vec![(0..data.len()).collect()]
    };
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of `test` in `0..n`.
pub fn train_indices(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in test {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}
