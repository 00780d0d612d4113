use serde::{Deserialize, Serialize};

use crate::domain::{ConstraintSet, LinearIneq, Vector};
use crate::error::{Error, Result};
use crate::serde_util;

/// `h(x) = 1` if `wᵀx + b ≥ 0`, else `0`, with `‖w‖₂ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinear")]
pub struct LinearBinaryModel {
    #[serde(with = "serde_util::vector")]
    pub weights: Vector,
    pub bias: f64,
}

#[derive(Deserialize)]
struct RawLinear {
    #[serde(with = "serde_util::vector")]
    weights: Vector,
    bias: f64,
}

impl TryFrom<RawLinear> for LinearBinaryModel {
    type Error = Error;
    fn try_from(raw: RawLinear) -> Result<Self> {
        LinearBinaryModel::new(raw.weights, raw.bias)
    }
}

impl LinearBinaryModel {
    /// Rescales `(w, b)` so that `‖w‖₂ = 1`; the decision function keeps its sign.
    pub fn new(weights: Vector, bias: f64) -> Result<Self> {
        let norm = weights.norm();
        if !(norm > 0.0 && norm.is_finite() && bias.is_finite()) {
            return Err(Error::InvalidArgument(
                "linear model needs a finite nonzero weight vector".into(),
            ));
        }
        Ok(Self {
            weights: weights / norm,
            bias: bias / norm,
        })
    }

    /// Signed distance to the hyperplane.
    pub fn decision(&self, x: &Vector) -> f64 {
        self.weights.dot(x) + self.bias
    }

    pub fn predict(&self, x: &Vector) -> usize {
        usize::from(self.decision(x) >= 0.0)
    }

    pub(crate) fn region(&self, target: usize) -> ConstraintSet {
        let ineq = if target == 1 {
            LinearIneq::new(-&self.weights, self.bias)
        } else {
            LinearIneq::new(self.weights.clone(), -self.bias)
        };
        ConstraintSet::with_linear(self.weights.len(), vec![ineq])
            .expect("region shares model dimension")
    }
}
