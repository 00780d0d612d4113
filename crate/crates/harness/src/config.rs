//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use cfrobust_core::models::ModelSpec;
use cfrobust_core::perturbation::PerturbationKind;
use cfrobust_core::{Metric, Regularization};
use serde::{Deserialize, Serialize};

use crate::data::BlobsSpec;
use crate::error::{io_err, HarnessError, Result};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetRef {
    Csv { path: PathBuf },
    Blobs(BlobsSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfMode {
    Closest,
    Plausible,
}

impl CfMode {
    pub fn name(self) -> &'static str {
        match self {
            CfMode::Closest => "closest",
            CfMode::Plausible => "plausible",
        }
    }
}

/// `l1` or squared `l2`, used both as the counterfactual objective and as
/// the reporting distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    L1,
    L2sq,
}

impl MetricName {
    pub fn metric(self) -> Metric {
        match self {
            MetricName::L1 => Metric::L1,
            MetricName::L2sq => Metric::SquaredL2,
        }
    }

    pub fn regularization(self, d: usize) -> Regularization {
        match self {
            MetricName::L1 => Regularization::l1(d),
            MetricName::L2sq => Regularization::SquaredL2,
        }
    }
}

/// Mixture settings; the seed is derived from the master seed per fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSettings {
    /// `None` picks 1 to 3 components per class by BIC.
    pub n_components: Option<usize>,
    pub max_iter: usize,
    pub reg: f64,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            n_components: None,
            max_iter: 200,
            reg: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub dataset: DatasetRef,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "default_modes")]
    pub modes: Vec<CfMode>,
    #[serde(default = "default_quantile")]
    pub threshold_quantile: f64,
    #[serde(default)]
    pub gmm: GmmSettings,
    /// Distance minimised when computing counterfactuals.
    #[serde(default = "default_objective")]
    pub objective: MetricName,
    /// Distance reported between the two counterfactuals.
    #[serde(default = "default_metric")]
    pub metric: MetricName,
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbationKind,
    /// Additionally mask 1 to ⌊d/2⌋ features, one masked copy per count.
    #[serde(default)]
    pub masking_sweep: bool,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_true")]
    pub stratify: bool,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate at most this many correctly classified samples per test fold.
    #[serde(default)]
    pub max_test_per_fold: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_modes() -> Vec<CfMode> {
    vec![CfMode::Closest, CfMode::Plausible]
}
fn default_quantile() -> f64 {
    0.25
}
fn default_objective() -> MetricName {
    MetricName::L1
}
fn default_metric() -> MetricName {
    MetricName::L1
}
fn default_perturbation() -> PerturbationKind {
    PerturbationKind::IsotropicGaussian { variance: 1.0 }
}
fn default_folds() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Defaults for everything but the dataset.
    pub fn new(dataset: DatasetRef) -> Self {
        Self {
            schema: SCHEMA,
            dataset,
            model: ModelSpec::default(),
            modes: default_modes(),
            threshold_quantile: default_quantile(),
            gmm: GmmSettings::default(),
            objective: default_objective(),
            metric: default_metric(),
            perturbation: default_perturbation(),
            masking_sweep: false,
            folds: default_folds(),
            stratify: true,
            seed: 0,
            max_test_per_fold: None,
            output: None,
        }
    }

    /// Reads a config and resolves relative dataset and output paths against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            if let DatasetRef::Csv { path: data } = &mut cfg.dataset {
                if data.is_relative() {
                    *data = dir.join(&*data);
                }
            }
            if let Some(out) = &mut cfg.output {
                if out.is_relative() {
                    *out = dir.join(&*out);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.schema != SCHEMA {
            return fail(format!("unsupported schema {} (expected {SCHEMA})", self.schema));
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.modes.is_empty() {
            return fail("at least one counterfactual mode is required".into());
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return fail(format!(
                "threshold_quantile must lie in (0, 1), got {}",
                self.threshold_quantile
            ));
        }
        if self.max_test_per_fold == Some(0) {
            return fail("max_test_per_fold must be positive".into());
        }
        if let DatasetRef::Csv { path } = &self.dataset {
            if !path.is_file() {
                return fail(format!("dataset file {} does not exist", path.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"schema": 1, "dataset": {"source": "blobs", "d": 2, "n_per_class": 10, "separation": 3.0, "seed": 0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.folds, 4);
        assert_eq!(cfg.modes, vec![CfMode::Closest, CfMode::Plausible]);
        assert_eq!(cfg.metric, MetricName::L1);
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ExperimentConfig::new(DatasetRef::Blobs(BlobsSpec {
            d: 2,
            n_per_class: 10,
            separation: 3.0,
            seed: 0,
        }));
        let mut c = base.clone();
        c.folds = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.schema = 2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.dataset = DatasetRef::Csv {
            path: "/nonexistent/file.csv".into(),
        };
        assert!(c.validate().is_err());
        let mut c = base;
        c.threshold_quantile = 1.0;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"schema": 1, "dataset": {"source": "blobs", "d": 2, "n_per_class": 1, "separation": 0, "seed": 0}, "typo": 1}"#
        )
        .is_err());
    }
}
