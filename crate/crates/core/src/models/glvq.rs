use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DecisionRegion;
use crate::domain::{ConstraintSet, Dataset, LinearIneq, Vector};
use crate::error::{Error, Result};
use crate::serde_util;

/// Nearest-prototype classifier under squared Euclidean distance. Ties go to
/// the prototype listed first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlvqModel {
    #[serde(with = "serde_util::vectors")]
    pub prototypes: Vec<Vector>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlvqParams {
    pub prototypes_per_class: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to zero over training.
    pub lr: f64,
    pub seed: u64,
}

impl Default for GlvqParams {
    fn default() -> Self {
        Self {
            prototypes_per_class: 3,
            epochs: 50,
            lr: 0.05,
            seed: 0,
        }
    }
}

impl GlvqModel {
    pub fn new(prototypes: Vec<Vector>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if prototypes.is_empty() || prototypes.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "need one label per prototype and at least one prototype".into(),
            ));
        }
        let d = prototypes[0].len();
        for p in &prototypes {
            crate::error::check_dim(d, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prototype"));
            }
        }
        for c in 0..n_classes {
            if !labels.contains(&c) {
                return Err(Error::InvalidArgument(format!("class {c} has no prototype")));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::UnknownLabel(l));
        }
        Ok(Self {
            prototypes,
            labels,
            n_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    fn nearest(&self, x: &Vector) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.prototypes.iter().enumerate() {
            let d = (x - p).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn predict(&self, x: &Vector) -> usize {
        self.labels[self.nearest(x)]
    }

    /// One polytope per target prototype `k`: `2(p_j − p_k)ᵀx ≤ ‖p_j‖² − ‖p_k‖²`
    /// against every prototype `j` of another class.
    pub(crate) fn regions(&self, target: usize) -> Vec<DecisionRegion> {
        let d = self.dim();
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == target)
            .map(|(k, _)| {
                let pk = &self.prototypes[k];
                let ineqs = self
                    .prototypes
                    .iter()
                    .zip(&self.labels)
                    .filter(|(_, &l)| l != target)
                    .map(|(pj, _)| {
                        LinearIneq::new((pj - pk) * 2.0, pj.norm_squared() - pk.norm_squared())
                    })
                    .collect();
                DecisionRegion {
                    id: k,
                    constraints: ConstraintSet::with_linear(d, ineqs)
                        .expect("prototypes share dimension"),
                }
            })
            .collect()
    }
}

/// Standard GLVQ: stochastic descent on `Σ sigmoid((d⁺ − d⁻)/(d⁺ + d⁻))`.
pub fn fit_glvq(data: &Dataset, params: &GlvqParams) -> Result<GlvqModel> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let ppc = params.prototypes_per_class;
    if ppc == 0 {
        return Err(Error::InvalidArgument("prototypes_per_class must be at least 1".into()));
    }
    if !(params.lr > 0.0) {
        return Err(Error::InvalidArgument("lr must be positive".into()));
    }
    let counts = data.class_counts();
    if let Some(c) = counts.iter().position(|&n| n < ppc) {
        return Err(Error::Training(format!(
            "class {c} has {} samples, fewer than {ppc} prototypes",
            counts[c]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let d = data.dim();

    let mut prototypes = Vec::with_capacity(ppc * data.n_classes);
    let mut labels = Vec::with_capacity(ppc * data.n_classes);
    for c in 0..data.n_classes {
        let members = data.class_samples(c);
        let n = members.len() as f64;
        let mean = members.iter().fold(Vector::zeros(d), |acc, x| acc + *x) / n;
        let spread = (members
            .iter()
            .map(|x| (*x - &mean).norm_squared())
            .sum::<f64>()
            / (n * d as f64))
            .sqrt();
        // Single prototypes start exactly at the mean.
        let scale = if ppc == 1 { 0.0 } else { 0.1 * spread.max(1e-6) };
        let jitter = Normal::new(0.0, scale).expect("finite scale");
        for _ in 0..ppc {
            prototypes.push(mean.map(|m| m + jitter.sample(&mut rng)));
            labels.push(c);
        }
    }

    let total = (params.epochs * data.len()).max(1) as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let s = &data.samples[i];
            let lr = params.lr * (1.0 - step as f64 / total);
            step += 1;
            let (mut plus, mut minus) = ((usize::MAX, f64::INFINITY), (usize::MAX, f64::INFINITY));
            for (j, p) in prototypes.iter().enumerate() {
                let dist = (&s.features - p).norm_squared();
                let slot = if labels[j] == s.label { &mut plus } else { &mut minus };
                if dist < slot.1 {
                    *slot = (j, dist);
                }
            }
            if minus.0 == usize::MAX {
                continue;
            }
            let denom = plus.1 + minus.1;
            if denom <= 0.0 {
                continue;
            }
            let mu = (plus.1 - minus.1) / denom;
            let f = 1.0 / (1.0 + (-mu).exp());
            let fp = f * (1.0 - f);
            let gp = lr * fp * 4.0 * minus.1 / (denom * denom);
            let gm = lr * fp * 4.0 * plus.1 / (denom * denom);
            let dp = &s.features - &prototypes[plus.0];
            let dm = &s.features - &prototypes[minus.0];
            prototypes[plus.0] += dp * gp;
            prototypes[minus.0] -= dm * gm;
        }
    }
    GlvqModel::new(prototypes, labels, data.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LabeledSample;
    use rand_distr::StandardNormal;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn blobs(seed: u64, n: usize, sep: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for i in 0..2 * n {
            let label = i % 2;
            let shift = if label == 0 { -sep / 2.0 } else { sep / 2.0 };
            let x0: f64 = StandardNormal.sample(&mut rng);
            let x1: f64 = StandardNormal.sample(&mut rng);
            samples.push(LabeledSample::new(v(&[x0 + shift, x1]), label).unwrap());
        }
        Dataset::new(samples, vec![], 2).unwrap()
    }

    #[test]
    fn nearest_prototype_wins() {
        let m = GlvqModel::new(vec![v(&[0., 0.]), v(&[4., 0.])], vec![0, 1], 2).unwrap();
        assert_eq!(m.predict(&v(&[1., 0.])), 0);
        assert_eq!(m.predict(&v(&[3., 0.])), 1);
    }

    #[test]
    fn two_prototype_region_is_bisector() {
        let m = GlvqModel::new(vec![v(&[-1., 0.]), v(&[1., 0.])], vec![0, 1], 2).unwrap();
        let r = m.regions(1);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].id, 1);
        assert_eq!(r[0].constraints.linear[0].normal, v(&[-4., 0.]));
        assert_eq!(r[0].constraints.linear[0].bound, 0.0);
    }

    #[test]
    fn blobs_single_prototype_near_means() {
        let data = blobs(3, 200, 6.0);
        let params = GlvqParams {
            prototypes_per_class: 1,
            ..GlvqParams::default()
        };
        let m = fit_glvq(&data, &params).unwrap();
        for c in 0..2 {
            let members = data.class_samples(c);
            let mean = members.iter().fold(Vector::zeros(2), |a, x| a + *x) / members.len() as f64;
            let dist = (&m.prototypes[c] - mean).norm();
            assert!(dist < 0.5, "class {c}: {dist}");
        }
    }

    #[test]
    fn blobs_are_learned() {
        let data = blobs(4, 200, 6.0);
        let m = fit_glvq(&data, &GlvqParams::default()).unwrap();
        let ok = data
            .samples
            .iter()
            .filter(|s| m.predict(&s.features) == s.label)
            .count();
        assert!(ok as f64 / data.len() as f64 >= 0.95);
        assert_eq!(m.prototypes.len(), 6);
        assert!(m.prototypes.iter().all(|p| p.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn rejects_bad_configuration() {
        let data = blobs(5, 2, 6.0);
        let zero = GlvqParams {
            prototypes_per_class: 0,
            ..GlvqParams::default()
        };
        assert!(fit_glvq(&data, &zero).is_err());
        // two samples per class, three prototypes requested
        assert!(fit_glvq(&data, &GlvqParams::default()).is_err());
    }

    #[test]
    fn training_is_seeded() {
        let data = blobs(6, 50, 2.0);
        let a = fit_glvq(&data, &GlvqParams::default()).unwrap();
        let b = fit_glvq(&data, &GlvqParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
