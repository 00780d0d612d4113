//! Cross-validated robustness experiments: per fold, fit the model and the
//! class densities on the training split, explain every correctly
//! classified test sample and one perturbed copy of it, and record the
//! distance between the two explanations.

use std::collections::BTreeMap;

use cfrobust_core::counterfactual::{CfConfig, TargetProblem};
use cfrobust_core::density::{choose_threshold, fit_gmm, GmmDensity, GmmSpec};
use cfrobust_core::models::{fit_model, Model};
use cfrobust_core::perturbation::{perturb_mask, Mask};
use cfrobust_core::rng::stream_rng;
use cfrobust_core::robustness::{perturbed_target, summarize};
use cfrobust_core::{distance, CounterfactualResult, Dataset, Metric, Regularization, Vector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CfMode, DatasetRef, ExperimentConfig, SCHEMA};
use crate::data::{kfold_indices, load_csv, make_blobs, train_indices};
use crate::error::{HarnessError, Result};

// Stream families under the master seed; the low bits carry an index.
const FOLD_STREAM: u64 = 1 << 40;
const TARGET_STREAM: u64 = 2 << 40;
const NOISE_STREAM: u64 = 3 << 40;
const MASK_STREAM: u64 = 4 << 40;
const GMM_STREAM: u64 = 5 << 40;
const MODEL_STREAM: u64 = 6 << 40;
const SUBSAMPLE_STREAM: u64 = 7 << 40;

fn derived_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).random()
}

pub fn load_dataset(source: &DatasetRef) -> Result<Dataset> {
    match source {
        DatasetRef::Csv { path } => Ok(load_csv(path)?.dataset),
        DatasetRef::Blobs(spec) => make_blobs(spec),
    }
}

/// Everything fitted on one training split.
#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub model: Model,
    pub gmm: Option<GmmDensity>,
    /// Per-class `ln δ̄`.
    pub log_thresholds: Option<Vec<f64>>,
}

/// Fits model, densities and thresholds on `train` only.
pub fn prepare_fold(train: &Dataset, cfg: &ExperimentConfig, fold: usize) -> Result<FoldArtifacts> {
    let mut spec = cfg.model.clone();
    spec.glvq.seed = derived_seed(cfg.seed, MODEL_STREAM | fold as u64);
    let model = fit_model(train, &spec)?;
    if !cfg.modes.contains(&CfMode::Plausible) {
        return Ok(FoldArtifacts {
            model,
            gmm: None,
            log_thresholds: None,
        });
    }
    let gmm = fit_gmm(
        train,
        &GmmSpec {
            n_components: cfg.gmm.n_components,
            seed: derived_seed(cfg.seed, GMM_STREAM | fold as u64),
            max_iter: cfg.gmm.max_iter,
            reg: cfg.gmm.reg,
        },
    )?;
    let thresholds = choose_threshold(&gmm, train, cfg.threshold_quantile)?;
    Ok(FoldArtifacts {
        model,
        gmm: Some(gmm),
        log_thresholds: Some(thresholds),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub fold: usize,
    /// Row of the sample in the dataset.
    pub index: usize,
    pub label: usize,
    pub target: usize,
    pub mode: CfMode,
    /// `None` for the configured noise, `Some(k)` for `k` masked features.
    pub masked: Option<usize>,
    pub perturbed_prediction: usize,
    pub perturbed_target: usize,
    /// The perturbed sample fell into a third class.
    pub flagged: bool,
    /// Cost of the counterfactual of the unperturbed sample.
    pub cf_cost: Option<f64>,
    pub distance: Option<f64>,
    pub skip_reason: Option<String>,
}

impl SampleRecord {
    pub fn perturbation_name(&self) -> String {
        match self.masked {
            None => "noise".into(),
            Some(k) => format!("mask:{k}"),
        }
    }
}

/// Median and mean distance of one (mode, perturbation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: CfMode,
    pub masked: Option<usize>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub count: usize,
    pub skipped: usize,
    pub flagged: usize,
}

/// Aggregates ordered by mode, then noise before masks, then mask count.
pub fn aggregate(records: &[SampleRecord]) -> Vec<Aggregate> {
    let mut cells: BTreeMap<(CfMode, Option<usize>), Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.mode, r.masked)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((mode, masked), rs)| {
            let d: Vec<f64> = rs.iter().filter_map(|r| r.distance).collect();
            let s = summarize(&d);
            Aggregate {
                mode,
                masked,
                median: s.map(|s| s.median),
                mean: s.map(|s| s.mean),
                count: d.len(),
                skipped: rs.len() - d.len(),
                flagged: rs.iter().filter(|r| r.flagged).count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_correct: usize,
    pub n_evaluated: usize,
    pub accuracy: f64,
    pub log_thresholds: Option<Vec<f64>>,
    pub components_per_class: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub folds: Vec<FoldSummary>,
    pub aggregates: Vec<Aggregate>,
    pub records: Vec<SampleRecord>,
}

impl ExperimentResult {
    pub fn find(&self, mode: CfMode, masked: Option<usize>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.mode == mode && a.masked == masked)
    }

    pub fn median(&self, mode: CfMode, masked: Option<usize>) -> Option<f64> {
        self.find(mode, masked).and_then(|a| a.median)
    }
}

/// Mask counts of the sweep: one up to half of the features.
pub fn mask_counts(d: usize) -> Vec<usize> {
    (1..=d / 2).collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    run_on(&data, cfg)
}

/// Test-fold indices used by `run_on`; they depend on labels and the seed only.
pub fn fold_indices(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<Vec<usize>>> {
    kfold_indices(data, cfg.folds, cfg.stratify, derived_seed(cfg.seed, FOLD_STREAM))
}

/// `run_experiment` on an already loaded dataset.
pub fn run_on(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let folds = fold_indices(data, cfg)?;
    let mut summaries = Vec::with_capacity(folds.len());
    let mut records = Vec::new();
    for (k, test) in folds.iter().enumerate() {
        let wrap = |e: HarnessError| HarnessError::Fold {
            fold: k,
            source: Box::new(e),
        };
        if test.is_empty() {
            return Err(wrap(HarnessError::Config("empty test fold".into())));
        }
        let train = data.subset(&train_indices(data.len(), test));
        let art = prepare_fold(&train, cfg, k).map_err(wrap)?;
        let (summary, recs) = evaluate_fold(data, test, &art, cfg, k).map_err(wrap)?;
        summaries.push(FoldSummary {
            n_train: train.len(),
            ..summary
        });
        records.extend(recs);
    }
    Ok(ExperimentResult {
        schema: SCHEMA,
        config: cfg.clone(),
        n_samples: data.len(),
        dim: data.dim(),
        n_classes: data.n_classes,
        folds: summaries,
        aggregates: aggregate(&records),
        records,
    })
}

/// Counterfactual problems of one fold, one per target class and mode.
struct Solvers<'a> {
    closest: Vec<TargetProblem>,
    plausible: Option<Vec<TargetProblem>>,
    reg: &'a Regularization,
    cfg: CfConfig,
}

impl Solvers<'_> {
    fn solve(&self, mode: CfMode, x: &Vector, target: usize) -> Result<CounterfactualResult> {
        Ok(match mode {
            CfMode::Closest => self.closest[target].solve_closest(x, self.reg, &self.cfg)?,
            CfMode::Plausible => self
                .plausible
                .as_ref()
                .expect("densities fitted when plausible mode is requested")[target]
                .solve_plausible(x, self.reg, &self.cfg)?,
        })
    }
}

fn evaluate_fold(
    data: &Dataset,
    test: &[usize],
    art: &FoldArtifacts,
    cfg: &ExperimentConfig,
    fold: usize,
) -> Result<(FoldSummary, Vec<SampleRecord>)> {
    let model = &art.model;
    let n_classes = data.n_classes;
    let mut correct = Vec::new();
    for &i in test {
        if model.predict(&data.samples[i].features)? == data.samples[i].label {
            correct.push(i);
        }
    }
    let mut chosen = correct.clone();
    if let Some(cap) = cfg.max_test_per_fold {
        if chosen.len() > cap {
            chosen.shuffle(&mut stream_rng(cfg.seed, SUBSAMPLE_STREAM | fold as u64));
            chosen.truncate(cap);
            chosen.sort_unstable();
        }
    }

    let reg = cfg.objective.regularization(data.dim());
    let closest = (0..n_classes)
        .map(|t| TargetProblem::closest(model, t))
        .collect::<cfrobust_core::Result<Vec<_>>>()?;
    let plausible = match (&art.gmm, &art.log_thresholds) {
        (Some(gmm), Some(th)) => Some(
            (0..n_classes)
                .map(|t| TargetProblem::plausible(model, t, gmm, th[t]))
                .collect::<cfrobust_core::Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let solvers = Solvers {
        closest,
        plausible,
        reg: &reg,
        cfg: CfConfig::default(),
    };
    let metric = cfg.metric.metric();
    let masks = if cfg.masking_sweep {
        mask_counts(data.dim())
    } else {
        Vec::new()
    };

    let per_sample: Vec<Vec<SampleRecord>> = chosen
        .par_iter()
        .map(|&i| evaluate_sample(data, i, fold, model, &solvers, cfg, &metric, &masks))
        .collect::<Result<_>>()?;

    let summary = FoldSummary {
        fold,
        n_train: 0,
        n_test: test.len(),
        n_correct: correct.len(),
        n_evaluated: chosen.len(),
        accuracy: correct.len() as f64 / test.len() as f64,
        log_thresholds: art.log_thresholds.clone(),
        components_per_class: art
            .gmm
            .as_ref()
            .map(|g| g.classes.iter().map(Vec::len).collect()),
    };
    Ok((summary, per_sample.into_iter().flatten().collect()))
}

#[allow(clippy::too_many_arguments)]
fn evaluate_sample(
    data: &Dataset,
    index: usize,
    fold: usize,
    model: &Model,
    solvers: &Solvers,
    cfg: &ExperimentConfig,
    metric: &Metric,
    masks: &[usize],
) -> Result<Vec<SampleRecord>> {
    let sample = &data.samples[index];
    let x = &sample.features;
    let label = sample.label;
    let target = if data.n_classes == 2 {
        1 - label
    } else {
        let r = stream_rng(cfg.seed, TARGET_STREAM | index as u64).random_range(0..data.n_classes - 1);
        if r >= label {
            r + 1
        } else {
            r
        }
    };

    let mut perturbed: Vec<(Option<usize>, Vector)> = Vec::with_capacity(1 + masks.len());
    let mut rng = stream_rng(cfg.seed, NOISE_STREAM | index as u64);
    perturbed.push((None, cfg.perturbation.apply(x, &mut rng)?));
    for &k in masks {
        let mut rng = stream_rng(cfg.seed, MASK_STREAM | (k as u64) << 24 | index as u64);
        perturbed.push((Some(k), perturb_mask(x, &Mask::Count(k), &mut rng)?));
    }
    let labelled: Vec<(Option<usize>, Vector, usize, usize, bool)> = perturbed
        .into_iter()
        .map(|(m, xp)| {
            let pred = model.predict(&xp)?;
            let (t, flagged) = perturbed_target(pred, label, target);
            Ok((m, xp, pred, t, flagged))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(cfg.modes.len() * labelled.len());
    for &mode in &cfg.modes {
        let original = solvers.solve(mode, x, target)?;
        for (masked, xp, pred, t, flagged) in &labelled {
            let mut rec = SampleRecord {
                fold,
                index,
                label,
                target,
                mode,
                masked: *masked,
                perturbed_prediction: *pred,
                perturbed_target: *t,
                flagged: *flagged,
                cf_cost: original.feasible.then_some(original.cost),
                distance: None,
                skip_reason: None,
            };
            if !original.feasible {
                rec.skip_reason = Some("no counterfactual for the original sample".into());
            } else {
                let other = solvers.solve(mode, xp, *t)?;
                if other.feasible {
                    rec.distance = Some(distance(&original.point, &other.point, metric)?);
                } else {
                    rec.skip_reason = Some("no counterfactual for the perturbed sample".into());
                }
            }
            out.push(rec);
        }
    }
    Ok(out)
}
