//! A trained model with its class densities, as stored by `train` and read
//! by `explain`.

use std::path::Path;

use cfrobust_core::counterfactual::{CfConfig, TargetProblem};
use cfrobust_core::density::GmmDensity;
use cfrobust_core::models::Model;
use cfrobust_core::{CounterfactualResult, Vector};
use serde::{Deserialize, Serialize};

use crate::config::{CfMode, ExperimentConfig, MetricName, SCHEMA};
use crate::error::{io_err, HarnessError, Result};
use crate::experiment::{load_dataset, prepare_fold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: u32,
    pub feature_names: Vec<String>,
    pub n_classes: usize,
    pub model: Model,
    pub gmm: Option<GmmDensity>,
    /// Per-class `ln δ̄`.
    pub log_thresholds: Option<Vec<f64>>,
}

/// Fits on the whole dataset of `cfg`; densities only when plausible mode
/// is among the configured modes.
pub fn train(cfg: &ExperimentConfig) -> Result<ModelDocument> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    let art = prepare_fold(&data, cfg, 0)?;
    Ok(ModelDocument {
        schema: SCHEMA,
        feature_names: data.feature_names.clone(),
        n_classes: data.n_classes,
        model: art.model,
        gmm: art.gmm,
        log_thresholds: art.log_thresholds,
    })
}

impl ModelDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let doc: ModelDocument = serde_json::from_str(&text)?;
        if doc.schema != SCHEMA {
            return Err(HarnessError::Config(format!(
                "unsupported model schema {}",
                doc.schema
            )));
        }
        Ok(doc)
    }

    /// Counterfactual of `x` for `target`, defaulting to the next class
    /// after the predicted one.
    pub fn explain(
        &self,
        x: &Vector,
        target: Option<usize>,
        mode: CfMode,
        objective: MetricName,
    ) -> Result<CounterfactualResult> {
        let predicted = self.model.predict(x)?;
        let target = target.unwrap_or((predicted + 1) % self.n_classes);
        if target == predicted {
            return Err(HarnessError::Config(format!(
                "sample is already classified as {target}"
            )));
        }
        let reg = objective.regularization(x.len());
        let cfg = CfConfig::default();
        Ok(match mode {
            CfMode::Closest => TargetProblem::closest(&self.model, target)?.solve_closest(x, &reg, &cfg)?,
            CfMode::Plausible => {
                let (Some(gmm), Some(th)) = (&self.gmm, &self.log_thresholds) else {
                    return Err(HarnessError::Config(
                        "model was trained without densities; retrain with plausible mode".into(),
                    ));
                };
                let th = *th
                    .get(target)
                    .ok_or(cfrobust_core::Error::UnknownLabel(target))?;
                TargetProblem::plausible(&self.model, target, gmm, th)?.solve_plausible(x, &reg, &cfg)?
            }
        })
    }
}
