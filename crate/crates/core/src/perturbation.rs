//! Natural input noise: additive Gaussian, additive bounded uniform, and
//! feature masking.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::Vector;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// `δ ∼ N(0, diag(variances))`.
    Gaussian { variances: Vec<f64> },
    /// `δ ∼ N(0, variance·I)` in whatever dimension the input has.
    IsotropicGaussian { variance: f64 },
    /// `δᵢ ∼ U(−ε, ε)` independently.
    Uniform { eps: f64 },
    /// Zero out `count` features chosen uniformly without replacement.
    MaskCount { count: usize },
    /// Zero out exactly these features.
    MaskIndices { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    pub seed: u64,
}

impl PerturbationKind {
    pub fn apply(&self, x: &Vector, rng: &mut impl Rng) -> Result<Vector> {
        match self {
            PerturbationKind::Gaussian { variances } => {
                perturb_gaussian(x, &Vector::from_column_slice(variances), rng)
            }
            PerturbationKind::IsotropicGaussian { variance } => {
                perturb_gaussian(x, &Vector::from_element(x.len(), *variance), rng)
            }
            PerturbationKind::Uniform { eps } => perturb_uniform(x, *eps, rng),
            PerturbationKind::MaskCount { count } => perturb_mask(x, &Mask::Count(*count), rng),
            PerturbationKind::MaskIndices { indices } => {
                perturb_mask(x, &Mask::Indices(indices.clone()), rng)
            }
        }
    }
}

pub fn perturb_gaussian(x: &Vector, variances: &Vector, rng: &mut impl Rng) -> Result<Vector> {
    check_dim(x.len(), variances.len())?;
    if variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(
            "gaussian variances must be finite and nonnegative".into(),
        ));
    }
    Ok(Vector::from_fn(x.len(), |i, _| {
        if variances[i] == 0.0 {
            x[i]
        } else {
            x[i] + Normal::new(0.0, variances[i].sqrt())
                .expect("validated scale")
                .sample(rng)
        }
    }))
}

pub fn perturb_uniform(x: &Vector, eps: f64, rng: &mut impl Rng) -> Result<Vector> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let u = Uniform::new_inclusive(-eps, eps).expect("validated bounds");
    Ok(x.map(|v| v + u.sample(rng)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mask {
    Count(usize),
    Indices(Vec<usize>),
}

/// Features a mask zeroes, drawn from `rng` when only a count is given.
pub fn mask_indices(d: usize, mask: &Mask, rng: &mut impl Rng) -> Result<Vec<usize>> {
    match mask {
        Mask::Count(k) => {
            if *k > d {
                return Err(Error::InvalidArgument(format!(
                    "cannot mask {k} of {d} features"
                )));
            }
            let mut idx = sample(rng, d, *k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        Mask::Indices(idx) => {
            if let Some(&i) = idx.iter().find(|&&i| i >= d) {
                return Err(Error::InvalidArgument(format!(
                    "mask index {i} out of range for {d} features"
                )));
            }
            Ok(idx.clone())
        }
    }
}

/// `x ⊙ m` with `m` zero on the masked features.
pub fn perturb_mask(x: &Vector, mask: &Mask, rng: &mut impl Rng) -> Result<Vector> {
    let mut out = x.clone();
    for i in mask_indices(x.len(), mask, rng)? {
        out[i] = 0.0;
    }
    Ok(out)
}
