//! Instability of counterfactuals on two-blob data as the dimension grows.

use cfrobust_core::models::{ModelKind, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::config::{CfMode, DatasetRef, ExperimentConfig, SCHEMA};
use crate::data::BlobsSpec;
use crate::error::{HarnessError, Result};
use crate::experiment::run_experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DimStudySpec {
    pub dims: Vec<usize>,
    pub kinds: Vec<ModelKind>,
    pub modes: Vec<CfMode>,
    pub n_per_class: usize,
    pub separation: f64,
    pub folds: usize,
    pub seed: u64,
    pub max_test_per_fold: Option<usize>,
}

impl Default for DimStudySpec {
    fn default() -> Self {
        Self {
            dims: vec![2, 4, 8, 16, 32],
            kinds: vec![ModelKind::Tree, ModelKind::Glvq],
            modes: vec![CfMode::Closest],
            n_per_class: 100,
            separation: 3.0,
            folds: 4,
            seed: 0,
            max_test_per_fold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimPoint {
    pub d: usize,
    pub kind: ModelKind,
    pub mode: CfMode,
    pub median: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimTrend {
    pub kind: ModelKind,
    pub mode: CfMode,
    /// Spearman correlation between dimension and median instability.
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStudyResult {
    pub schema: u32,
    pub spec: DimStudySpec,
    pub points: Vec<DimPoint>,
    pub trends: Vec<DimTrend>,
}

pub fn run_dimensionality_study(spec: &DimStudySpec) -> Result<DimStudyResult> {
    if spec.dims.is_empty() || spec.dims.contains(&0) {
        return Err(HarnessError::Config("dimensions must be positive".into()));
    }
    let mut points = Vec::new();
    for &d in &spec.dims {
        let blobs = BlobsSpec {
            d,
            n_per_class: spec.n_per_class,
            separation: spec.separation,
            seed: spec.seed.wrapping_add(d as u64),
        };
        for &kind in &spec.kinds {
            let mut cfg = ExperimentConfig::new(DatasetRef::Blobs(blobs));
            cfg.model = ModelSpec {
                kind,
                ..ModelSpec::default()
            };
            cfg.modes = spec.modes.clone();
            cfg.folds = spec.folds;
            cfg.seed = spec.seed;
            cfg.max_test_per_fold = spec.max_test_per_fold;
            let res = run_experiment(&cfg)?;
            for &mode in &spec.modes {
                let agg = res.find(mode, None);
                points.push(DimPoint {
                    d,
                    kind,
                    mode,
                    median: agg.and_then(|a| a.median),
                    count: agg.map_or(0, |a| a.count),
                });
            }
        }
    }
    let mut trends = Vec::new();
    for &kind in &spec.kinds {
        for &mode in &spec.modes {
            let pairs: Option<Vec<(f64, f64)>> = points
                .iter()
                .filter(|p| p.kind == kind && p.mode == mode)
                .map(|p| p.median.map(|m| (p.d as f64, m)))
                .collect();
            trends.push(DimTrend {
                kind,
                mode,
                spearman: pairs.and_then(|p| spearman(&p)),
            });
        }
    }
    Ok(DimStudyResult {
        schema: SCHEMA,
        spec: spec.clone(),
        points,
        trends,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of ranks; `None` with fewer than two points or a
/// constant coordinate.
pub fn spearman(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let a = ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let b = ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
