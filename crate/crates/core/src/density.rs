//! Class-conditional Gaussian mixtures and the quadratic constraints that
//! make a density threshold tractable.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Matrix, Vector};
use crate::error::{check_dim, Error, Result};
use crate::optim::FactoredEllipsoid;
use crate::rng::stream_rng;
use crate::serde_util;

/// One weighted Gaussian. The eigendecomposition of the covariance is cached
/// and rebuilt on deserialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComponent")]
pub struct GmmComponent {
    pub weight: f64,
    #[serde(with = "serde_util::vector")]
    pub mean: Vector,
    #[serde(with = "serde_util::matrix")]
    pub covariance: Matrix,
    #[serde(skip)]
    eigvecs: Matrix,
    #[serde(skip)]
    eigvals: Vector,
    #[serde(skip)]
    log_det: f64,
}

#[derive(Deserialize)]
struct RawComponent {
    weight: f64,
    #[serde(with = "serde_util::vector")]
    mean: Vector,
    #[serde(with = "serde_util::matrix")]
    covariance: Matrix,
}

impl TryFrom<RawComponent> for GmmComponent {
    type Error = Error;
    fn try_from(raw: RawComponent) -> Result<Self> {
        GmmComponent::new(raw.weight, raw.mean, raw.covariance)
    }
}

impl GmmComponent {
    pub fn new(weight: f64, mean: Vector, covariance: Matrix) -> Result<Self> {
        let d = mean.len();
        check_dim(d, covariance.nrows())?;
        check_dim(d, covariance.ncols())?;
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "component weight {weight} outside (0, 1]"
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian component"));
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument(
                "covariance is not positive definite".into(),
            ));
        }
        let log_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(Self {
            weight,
            mean,
            covariance: sym,
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x − μ)ᵀΣ⁻¹(x − μ)`.
    pub fn mahalanobis(&self, x: &Vector) -> f64 {
        let z = self.eigvecs.tr_mul(&(x - &self.mean));
        z.iter().zip(self.eigvals.iter()).map(|(z, l)| z * z / l).sum()
    }

    /// `ln det(2πΣ)`.
    pub fn log_det_2pi(&self) -> f64 {
        self.dim() as f64 * (2.0 * PI).ln() + self.log_det
    }

    /// Log density of the unweighted Gaussian.
    pub fn log_pdf(&self, x: &Vector) -> f64 {
        -0.5 * (self.log_det_2pi() + self.mahalanobis(x))
    }

    /// `ln π + ln N(x | μ, Σ)`.
    pub fn log_weighted_pdf(&self, x: &Vector) -> f64 {
        self.weight.ln() + self.log_pdf(x)
    }

    fn trace_inverse(&self) -> f64 {
        self.eigvals.iter().map(|l| 1.0 / l).sum()
    }
}

/// One mixture per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDensity {
    pub classes: Vec<Vec<GmmComponent>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSpec {
    /// `None` selects 1–3 components per class by BIC.
    pub n_components: Option<usize>,
    pub seed: u64,
    pub max_iter: usize,
    pub reg: f64,
}

impl Default for GmmSpec {
    fn default() -> Self {
        Self {
            n_components: None,
            seed: 0,
            max_iter: 200,
            reg: 1e-6,
        }
    }
}

/// A fitted mixture for one class with the objective recorded after every
/// E-step.
#[derive(Debug, Clone)]
pub struct EmTrace {
    pub components: Vec<GmmComponent>,
    /// Penalised log-likelihood, one entry per iteration.
    pub objective: Vec<f64>,
    pub log_likelihood: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn kmeans_pp(points: &[&Vector], k: usize, rng: &mut impl Rng) -> Vec<Vector> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (*p - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min((*p - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

/// Weighted moments with the covariance penalty folded in:
/// `Σ_k = (S_k + αI)/N_k`.
fn m_step(points: &[&Vector], resp: &Matrix, alpha: f64) -> Result<Vec<GmmComponent>> {
    let (n, k) = resp.shape();
    let d = points[0].len();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let nk = resp.column(j).sum().max(1e-300);
        let mean = points
            .iter()
            .enumerate()
            .fold(Vector::zeros(d), |acc, (i, p)| acc + *p * resp[(i, j)])
            / nk;
        let mut centred = Matrix::zeros(n, d);
        for (i, p) in points.iter().enumerate() {
            let r = resp[(i, j)].sqrt();
            centred.set_row(i, &((*p - &mean) * r).transpose());
        }
        let scatter = centred.tr_mul(&centred);
        let cov = (scatter + Matrix::identity(d, d) * alpha) / nk;
        out.push(GmmComponent::new((nk / n as f64).min(1.0), mean, cov)?);
    }
    Ok(out)
}

/// Responsibilities and the penalised objective for the current parameters.
fn e_step(points: &[&Vector], comps: &[GmmComponent], alpha: f64) -> (Matrix, f64, f64) {
    let k = comps.len();
    let mut resp = Matrix::zeros(points.len(), k);
    let mut ll = 0.0;
    let mut row = vec![0.0; k];
    for (i, p) in points.iter().enumerate() {
        for (j, c) in comps.iter().enumerate() {
            row[j] = c.log_weighted_pdf(p);
        }
        let lse = log_sum_exp(&row);
        ll += lse;
        for j in 0..k {
            resp[(i, j)] = (row[j] - lse).exp();
        }
    }
    let penalty: f64 = comps.iter().map(|c| c.trace_inverse()).sum::<f64>() * 0.5 * alpha;
    (resp, ll - penalty, ll)
}

/// EM for one class. The objective is the log-likelihood minus
/// `½·reg·n·Σ_k tr(Σ_k⁻¹)`, whose exact maximiser in the M-step is the
/// regularised covariance, so it never decreases.
pub fn fit_class_gmm(
    points: &[&Vector],
    k: usize,
    seed: u64,
    max_iter: usize,
    reg: f64,
) -> Result<EmTrace> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("class samples"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "{k} components requested for {n} samples"
        )));
    }
    if !(reg > 0.0) {
        return Err(Error::InvalidArgument("reg must be positive".into()));
    }
    let alpha = reg * n as f64;
    let identical = points.iter().all(|p| *p == points[0]);
    let k = if identical { 1 } else { k };

    let mut rng = stream_rng(seed, 0);
    let centers = kmeans_pp(points, k, &mut rng);
    let mut resp = Matrix::zeros(n, k);
    for (i, p) in points.iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| {
                (*p - &centers[a])
                    .norm_squared()
                    .total_cmp(&(*p - &centers[b]).norm_squared())
            })
            .expect("k ≥ 1");
        resp[(i, nearest)] = 1.0;
    }
    let mut comps = m_step(points, &resp, alpha)?;
    let mut objective = Vec::new();
    let mut ll;
    loop {
        let (r, obj, raw) = e_step(points, &comps, alpha);
        ll = raw;
        let converged = objective
            .last()
            .is_some_and(|prev: &f64| obj - prev <= 1e-10 * obj.abs().max(1.0));
        objective.push(obj);
        if converged || objective.len() > max_iter {
            break;
        }
        comps = m_step(points, &r, alpha)?;
    }
    Ok(EmTrace {
        components: comps,
        objective,
        log_likelihood: ll,
    })
}

fn bic(trace: &EmTrace, n: usize, d: usize) -> f64 {
    let k = trace.components.len();
    let params = k * (d + d * (d + 1) / 2) + k - 1;
    -2.0 * trace.log_likelihood + params as f64 * (n as f64).ln()
}

pub fn fit_gmm(data: &Dataset, spec: &GmmSpec) -> Result<GmmDensity> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let d = data.dim();
    let mut classes = Vec::with_capacity(data.n_classes);
    for c in 0..data.n_classes {
        let points = data.class_samples(c);
        if points.is_empty() {
            return Err(Error::Training(format!("class {c} has no samples")));
        }
        let seed = spec.seed.wrapping_add(c as u64);
        let fit = match spec.n_components {
            Some(k) => fit_class_gmm(&points, k, seed, spec.max_iter, spec.reg)?,
            None => {
                let mut best: Option<(f64, EmTrace)> = None;
                for k in 1..=3.min(points.len()) {
                    let t = fit_class_gmm(&points, k, seed, spec.max_iter, spec.reg)?;
                    let score = bic(&t, points.len(), d);
                    if best.as_ref().is_none_or(|(s, _)| score < *s) {
                        best = Some((score, t));
                    }
                }
                best.expect("at least one candidate").1
            }
        };
        classes.push(fit.components);
    }
    Ok(GmmDensity { classes })
}

impl GmmDensity {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0][0].dim()
    }

    pub fn components(&self, class: usize) -> Result<&[GmmComponent]> {
        self.classes
            .get(class)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownLabel(class))
    }

    pub fn log_density(&self, class: usize, x: &Vector) -> Result<f64> {
        let comps = self.components(class)?;
        check_dim(self.dim(), x.len())?;
        let terms: Vec<f64> = comps.iter().map(|c| c.log_weighted_pdf(x)).collect();
        Ok(log_sum_exp(&terms))
    }
}

/// Outcome of turning one component into a sufficient condition for the
/// density threshold.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentConstraint {
    /// `(x − μ)ᵀΣ⁻¹(x − μ) ≤ bound`, factored by the covariance eigenbasis.
    Feasible(FactoredEllipsoid),
    /// The weighted component never reaches the threshold.
    Infeasible,
}

/// The set where `π·N(x | μ, Σ) ≥ δ̄` on its own; `log_threshold = ln δ̄`.
/// Its bound is `2(ln π − ln δ̄) − ln det(2πΣ)`.
pub fn component_constraint(comp: &GmmComponent, log_threshold: f64) -> ComponentConstraint {
    let c = 2.0 * (comp.weight.ln() - log_threshold) - comp.log_det_2pi();
    if !(c >= 0.0) {
        return ComponentConstraint::Infeasible;
    }
    ComponentConstraint::Feasible(FactoredEllipsoid {
        basis: comp.eigvecs.clone(),
        curvature: comp.eigvals.map(|l| 1.0 / l),
        center: comp.mean.clone(),
        bound: c,
    })
}

/// `ln` of the linearly interpolated `q`-quantile of the densities whose
/// logs are given, computed without leaving log space.
pub fn log_quantile(log_values: &[f64], q: f64) -> Result<f64> {
    if log_values.is_empty() {
        return Err(Error::Empty("density values"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1)")));
    }
    let mut v = log_values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let t = pos - lo as f64;
    if t == 0.0 || lo + 1 >= v.len() {
        return Ok(v[lo]);
    }
    let gap = v[lo + 1] - v[lo];
    // lo + t(hi − lo) = lo·(1 + t(e^gap − 1))
    Ok(if gap > 700.0 {
        v[lo + 1] + t.ln()
    } else {
        v[lo] + (t * gap.exp_m1()).ln_1p()
    })
}

/// Per-class `ln δ̄_y`: the `q`-quantile of the class density over that
/// class's training samples.
pub fn choose_threshold(gmm: &GmmDensity, data: &Dataset, q: f64) -> Result<Vec<f64>> {
    (0..gmm.n_classes())
        .map(|c| {
            let logs = data
                .class_samples(c)
                .into_iter()
                .map(|x| gmm.log_density(c, x))
                .collect::<Result<Vec<_>>>()?;
            if logs.is_empty() {
                return Err(Error::Training(format!("class {c} has no samples")));
            }
            log_quantile(&logs, q)
        })
        .collect()
}
