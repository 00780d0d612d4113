//! Classifier families and their decision regions.
//!
//! Every model can describe the set `{x : h(x) = y}` as a union of convex
//! pieces. Points on a decision boundary are treated as belonging to the
//! requested class, so all pieces are closed.

mod glvq;
mod linear;
mod pca;
mod pipeline;
mod softmax;
mod tree;

use serde::{Deserialize, Serialize};

use crate::domain::{compose_affine, AffineMap, ConstraintSet, Vector};
use crate::error::{check_dim, Error, Result};

pub use glvq::{fit_glvq, GlvqModel, GlvqParams};
pub use linear::LinearBinaryModel;
pub use pca::{fit_pca, fit_standardizer, Pca};
pub use pipeline::{fit_model, ModelKind, ModelSpec};
pub use softmax::{fit_softmax, softmax_loss, SoftmaxModel, SoftmaxParams};
pub use tree::{fit_tree, TreeModel, TreeNode};

/// One convex piece of a target-class region. `id` names the leaf node,
/// prototype or polytope it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRegion {
    pub id: usize,
    pub constraints: ConstraintSet,
}

/// A base model trained in a projected space together with the affine map
/// (standardisation and/or PCA) that feeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPipelineModel {
    pub map: AffineMap,
    pub inner: Box<Model>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    LinearBinary(LinearBinaryModel),
    Softmax(SoftmaxModel),
    Glvq(GlvqModel),
    Tree(TreeModel),
    Pipeline(PcaPipelineModel),
}

impl Model {
    /// Input dimension.
    pub fn dim(&self) -> usize {
        match self {
            Model::LinearBinary(m) => m.weights.len(),
            Model::Softmax(m) => m.weights.ncols(),
            Model::Glvq(m) => m.dim(),
            Model::Tree(m) => m.dim,
            Model::Pipeline(p) => p.map.input_dim(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::LinearBinary(_) => 2,
            Model::Softmax(m) => m.weights.nrows(),
            Model::Glvq(m) => m.n_classes,
            Model::Tree(m) => m.n_classes,
            Model::Pipeline(p) => p.inner.n_classes(),
        }
    }

    pub fn predict(&self, x: &Vector) -> Result<usize> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Model::LinearBinary(m) => m.predict(x),
            Model::Softmax(m) => m.predict(x),
            Model::Glvq(m) => m.predict(x),
            Model::Tree(m) => m.predict(x),
            Model::Pipeline(p) => p.inner.predict(&p.map.apply(x)?)?,
        })
    }

    /// Convex pieces whose union is the region classified as `target`.
    pub fn decision_regions(&self, target: usize) -> Result<Vec<DecisionRegion>> {
        if target >= self.n_classes() {
            return Err(Error::UnknownLabel(target));
        }
        Ok(match self {
            Model::LinearBinary(m) => vec![DecisionRegion {
                id: 0,
                constraints: m.region(target),
            }],
            Model::Softmax(m) => vec![DecisionRegion {
                id: 0,
                constraints: m.region(target),
            }],
            Model::Glvq(m) => m.regions(target),
            Model::Tree(m) => m.regions(target),
            Model::Pipeline(p) => p
                .inner
                .decision_regions(target)?
                .into_iter()
                .map(|r| {
                    Ok(DecisionRegion {
                        id: r.id,
                        constraints: compose_affine(&r.constraints, &p.map)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// The model with any pipeline unwrapped.
    pub fn base(&self) -> &Model {
        match self {
            Model::Pipeline(p) => p.inner.base(),
            m => m,
        }
    }
}
