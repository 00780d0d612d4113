use serde::{Deserialize, Serialize};

use super::{
    fit_glvq, fit_pca, fit_softmax, fit_standardizer, fit_tree, GlvqParams, LinearBinaryModel,
    Model, PcaPipelineModel, SoftmaxParams,
};
use crate::domain::{AffineMap, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Binary linear classifier, trained as two-class softmax.
    Linear,
    Softmax,
    Glvq,
    Tree,
}

/// Everything needed to train one model on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub standardize: bool,
    pub pca_dims: Option<usize>,
    pub softmax: SoftmaxParams,
    pub glvq: GlvqParams,
    pub tree_depth: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Softmax,
            standardize: true,
            pca_dims: None,
            softmax: SoftmaxParams::default(),
            glvq: GlvqParams::default(),
            tree_depth: 7,
        }
    }
}

/// Fits the preprocessing map on `data`, then the model on the mapped data.
///
/// Linear models have the map folded into `(w, b)` and come back in input
/// space; other kinds are wrapped in a pipeline unless no map was requested.
pub fn fit_model(data: &Dataset, spec: &ModelSpec) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut map: Option<AffineMap> = None;
    if spec.standardize {
        map = Some(fit_standardizer(data)?);
    }
    if let Some(k) = spec.pca_dims {
        let staged = match &map {
            Some(m) => data.mapped(m)?,
            None => data.clone(),
        };
        let pca = fit_pca(&staged, k)?.map;
        map = Some(match map {
            Some(m) => m.then(&pca)?,
            None => pca,
        });
    }
    let train = match &map {
        Some(m) => data.mapped(m)?,
        None => data.clone(),
    };

    let inner = match spec.kind {
        ModelKind::Linear => {
            if data.n_classes != 2 {
                return Err(Error::Training(format!(
                    "linear binary model needs 2 classes, data has {}",
                    data.n_classes
                )));
            }
            let sm = fit_softmax(&train, &spec.softmax)?;
            let w = (sm.weights.row(1) - sm.weights.row(0)).transpose();
            let b = sm.bias[1] - sm.bias[0];
            let (w, b) = match &map {
                Some(m) => (m.matrix.transpose() * &w, b + w.dot(&m.offset)),
                None => (w, b),
            };
            return Ok(Model::LinearBinary(LinearBinaryModel::new(w, b)?));
        }
        ModelKind::Softmax => Model::Softmax(fit_softmax(&train, &spec.softmax)?),
        ModelKind::Glvq => Model::Glvq(fit_glvq(&train, &spec.glvq)?),
        ModelKind::Tree => Model::Tree(fit_tree(&train, spec.tree_depth)?),
    };
    Ok(match map {
        Some(map) => Model::Pipeline(PcaPipelineModel {
            map,
            inner: Box::new(inner),
        }),
        None => inner,
    })
}
