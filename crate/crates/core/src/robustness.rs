//! Instability of counterfactual explanations under input noise, plus the
//! closed-form expectations and bounds for linear binary classifiers.

use serde::{Deserialize, Serialize};

use crate::domain::{distance, CounterfactualResult, LabeledSample, Metric, Vector};
use crate::error::{check_dim, Error, Result};
use crate::models::{LinearBinaryModel, Model};
use crate::perturbation::PerturbationSpec;
use crate::rng::stream_rng;
use crate::serde_util;

/// Target for the perturbed point: `y′` while it keeps the original label,
/// the original label once it has crossed to `y′`. Any other label keeps
/// `y′` and raises the flag.
pub fn perturbed_target(predicted: usize, y_orig: usize, y_prime: usize) -> (usize, bool) {
    if predicted == y_orig {
        (y_prime, false)
    } else if predicted == y_prime {
        (y_orig, false)
    } else {
        (y_prime, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
    /// Standard error of the mean; zero for a single value.
    pub std_err: f64,
}

/// Mean, median (average of the middle pair for even counts) and standard
/// error; `None` for no values.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        median,
        count: n,
        std_err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityRecord {
    pub draw: usize,
    #[serde(with = "serde_util::vector")]
    pub perturbed: Vector,
    pub perturbed_prediction: usize,
    pub target: usize,
    /// The perturbed point landed in a third class.
    pub flagged: bool,
    pub cf_perturbed: Option<Vec<f64>>,
    pub distance: Option<f64>,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    #[serde(with = "serde_util::vector")]
    pub origin: Vector,
    pub label: usize,
    pub target: usize,
    #[serde(with = "serde_util::vector")]
    pub cf_original: Vector,
    pub metric: Metric,
    pub perturbation: PerturbationSpec,
    pub records: Vec<InstabilityRecord>,
    pub summary: Option<Summary>,
    pub skipped: usize,
}

impl InstabilityReport {
    /// Aggregates over the non-skipped records.
    pub fn recompute(&mut self) {
        let d: Vec<f64> = self.records.iter().filter_map(|r| r.distance).collect();
        self.summary = summarize(&d);
        self.skipped = self.records.len() - d.len();
    }
}

/// Monte-Carlo estimate of `E[dist(x_cf, x_cf′)]` over `n_draws`
/// perturbations of `x`. Draw `i` uses stream `i` of the spec's seed.
///
/// `cf` maps a point and a target class to a counterfactual; infeasible
/// counterfactuals of perturbed points are recorded as skipped.
pub fn estimate_instability<F>(
    model: &Model,
    cf: F,
    x: &LabeledSample,
    target: usize,
    spec: &PerturbationSpec,
    n_draws: usize,
    metric: &Metric,
) -> Result<InstabilityReport>
where
    F: Fn(&Vector, usize) -> Result<CounterfactualResult>,
{
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    if model.predict(&x.features)? != x.label {
        return Err(Error::InvalidArgument(
            "sample is not classified as its own label".into(),
        ));
    }
    let original = cf(&x.features, target)?;
    if !original.feasible {
        return Err(Error::Infeasible(
            "no counterfactual for the unperturbed sample".into(),
        ));
    }
    let mut records = Vec::with_capacity(n_draws);
    for draw in 0..n_draws {
        let mut rng = stream_rng(spec.seed, draw as u64);
        let perturbed = spec.kind.apply(&x.features, &mut rng)?;
        let predicted = model.predict(&perturbed)?;
        let (t, flagged) = perturbed_target(predicted, x.label, target);
        let other = cf(&perturbed, t)?;
        let (cf_perturbed, dist, skip_reason) = if other.feasible {
            let d = distance(&original.point, &other.point, metric)?;
            (Some(other.point.as_slice().to_vec()), Some(d), None)
        } else {
            (None, None, Some("infeasible counterfactual".to_string()))
        };
        records.push(InstabilityRecord {
            draw,
            perturbed,
            perturbed_prediction: predicted,
            target: t,
            flagged,
            cf_perturbed,
            distance: dist,
            skip_reason,
        });
    }
    let mut report = InstabilityReport {
        origin: x.features.clone(),
        label: x.label,
        target,
        cf_original: original.point,
        metric: metric.clone(),
        perturbation: spec.clone(),
        records,
        summary: None,
        skipped: 0,
    };
    report.recompute();
    Ok(report)
}

/// Individual fairness: near inputs (`dist ≤ ε1`) must get near outputs
/// (`Δ ≤ ε2`).
pub fn fairness_check<D>(
    x1: &Vector,
    x2: &Vector,
    model: &Model,
    eps1: f64,
    eps2: f64,
    metric: &Metric,
    delta: D,
) -> Result<bool>
where
    D: Fn(usize, usize) -> f64,
{
    if !(eps1 > 0.0 && eps2 >= 0.0) {
        return Err(Error::InvalidArgument("fairness thresholds must be positive".into()));
    }
    if distance(x1, x2, metric)? > eps1 {
        return Ok(true);
    }
    Ok(delta(model.predict(x1)?, model.predict(x2)?) <= eps2)
}

/// `2ε + 2‖x_orig − x_cf‖_p`.
pub fn bound_general(eps: f64, x_orig: &Vector, x_cf: &Vector, p: f64) -> Result<f64> {
    Ok(2.0 * eps + 2.0 * distance(x_orig, x_cf, &Metric::Lp { p })?)
}

/// `2ε + 2|wᵀx + b|` for a unit-norm `w`; with `b = 0` this is `2ε + 2|wᵀx|`.
pub fn bound_linear(eps: f64, model: &LinearBinaryModel, x_orig: &Vector) -> Result<f64> {
    check_dim(model.weights.len(), x_orig.len())?;
    Ok(2.0 * eps + 2.0 * model.decision(x_orig).abs())
}

/// `trace(Σ) − wᵀΣw` for `Σ = diag(variances)` and unit `w`: the expected
/// squared distance between closest counterfactuals under Gaussian noise.
pub fn instability_gaussian_linear(variances: &Vector, w: &Vector) -> Result<f64> {
    check_dim(w.len(), variances.len())?;
    let trace: f64 = variances.sum();
    let quad: f64 = w.iter().zip(variances.iter()).map(|(w, s)| w * w * s).sum();
    Ok(trace - quad)
}

/// `ε²(d − 1)/3`: the same expectation under `U(−ε, ε)` noise.
pub fn instability_uniform_linear(eps: f64, d: usize) -> f64 {
    eps * eps * (d.saturating_sub(1)) as f64 / 3.0
}

/// Markov bound `(d − 1)/δ` on `P(dist > δ)` under unit Gaussian noise,
/// clipped to `[0, 1]`.
pub fn tail_bound_gaussian(delta: f64, d: usize) -> f64 {
    markov(d.saturating_sub(1) as f64, delta)
}

/// Markov bound `ε²(d − 1)/(3δ)` on `P(dist > δ)` under uniform noise,
/// clipped to `[0, 1]`.
pub fn tail_bound_uniform(delta: f64, eps: f64, d: usize) -> f64 {
    markov(instability_uniform_linear(eps, d), delta)
}

fn markov(mean: f64, delta: f64) -> f64 {
    if !(delta > 0.0) {
        return 1.0;
    }
    (mean / delta).clamp(0.0, 1.0)
}
