//! Shared data model: samples, datasets, affine maps, constraint sets and
//! counterfactual queries/results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::serde_util;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    #[serde(with = "serde_util::vector")]
    pub features: Vector,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: Vector, label: usize) -> Result<Self> {
        if !all_finite(features.iter()) {
            return Err(Error::NonFinite("sample features"));
        }
        Ok(Self { features, label })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub feature_names: Vec<String>,
    pub n_classes: usize,
}

impl Dataset {
    /// Validates that every sample shares one dimension and carries a label in
    /// `0..n_classes`. Empty feature names are filled with `x0, x1, ...`.
    pub fn new(
        samples: Vec<LabeledSample>,
        mut feature_names: Vec<String>,
        n_classes: usize,
    ) -> Result<Self> {
        let d = samples.first().map_or(feature_names.len(), LabeledSample::dim);
        for s in &samples {
            check_dim(d, s.dim())?;
            if s.label >= n_classes {
                return Err(Error::UnknownLabel(s.label));
            }
        }
        if feature_names.is_empty() {
            feature_names = (0..d).map(|i| format!("x{i}")).collect();
        }
        check_dim(d, feature_names.len())?;
        Ok(Self {
            samples,
            feature_names,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Feature matrix with one sample per row.
    pub fn features(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(self.len(), d, |i, j| self.samples[i].features[j])
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Samples of a single class, in dataset order.
    pub fn class_samples(&self, class: usize) -> Vec<&Vector> {
        self.samples
            .iter()
            .filter(|s| s.label == class)
            .map(|s| &s.features)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            n_classes: self.n_classes,
        }
    }

    /// Same samples with features replaced by `map(features)`.
    pub fn mapped(&self, map: &AffineMap) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(LabeledSample {
                    features: map.apply(&s.features)?,
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            feature_names: (0..map.output_dim()).map(|i| format!("z{i}")).collect(),
            n_classes: self.n_classes,
        })
    }
}

/// `x ↦ matrix·x + offset`, mapping `input_dim` to `output_dim` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    #[serde(with = "serde_util::matrix")]
    pub matrix: Matrix,
    #[serde(with = "serde_util::vector")]
    pub offset: Vector,
}

impl AffineMap {
    pub fn new(matrix: Matrix, offset: Vector) -> Result<Self> {
        check_dim(matrix.nrows(), offset.len())?;
        if matrix.nrows() > matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "affine map cannot expand dimension ({} > {})",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !all_finite(matrix.iter()) || !all_finite(offset.iter()) {
            return Err(Error::NonFinite("affine map"));
        }
        Ok(Self { matrix, offset })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            matrix: Matrix::identity(d, d),
            offset: Vector::zeros(d),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.input_dim(), x.len())?;
        Ok(&self.matrix * x + &self.offset)
    }

    /// The map `x ↦ outer(self(x))`.
    pub fn then(&self, outer: &AffineMap) -> Result<AffineMap> {
        check_dim(outer.input_dim(), self.output_dim())?;
        Ok(AffineMap {
            matrix: &outer.matrix * &self.matrix,
            offset: &outer.matrix * &self.offset + &outer.offset,
        })
    }
}

/// `normalᵀx ≤ bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIneq {
    #[serde(with = "serde_util::vector")]
    pub normal: Vector,
    pub bound: f64,
}

impl LinearIneq {
    pub fn new(normal: Vector, bound: f64) -> Self {
        Self { normal, bound }
    }

    /// Positive when violated.
    pub fn violation(&self, x: &Vector) -> f64 {
        self.normal.dot(x) - self.bound
    }
}

/// `(x − center)ᵀ shape (x − center) ≤ bound` with `shape` positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadIneq {
    #[serde(with = "serde_util::matrix")]
    pub shape: Matrix,
    #[serde(with = "serde_util::vector")]
    pub center: Vector,
    pub bound: f64,
}

impl QuadIneq {
    pub fn new(shape: Matrix, center: Vector, bound: f64) -> Result<Self> {
        check_dim(shape.nrows(), center.len())?;
        check_dim(shape.nrows(), shape.ncols())?;
        Ok(Self {
            shape,
            center,
            bound,
        })
    }

    pub fn value(&self, x: &Vector) -> f64 {
        let diff = x - &self.center;
        diff.dot(&(&self.shape * &diff))
    }

    pub fn violation(&self, x: &Vector) -> f64 {
        self.value(x) - self.bound
    }
}

/// A convex feasible region: intersection of halfspaces and ellipsoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub dim: usize,
    pub linear: Vec<LinearIneq>,
    pub quadratic: Vec<QuadIneq>,
}

impl ConstraintSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            linear: Vec::new(),
            quadratic: Vec::new(),
        }
    }

    pub fn with_linear(dim: usize, linear: Vec<LinearIneq>) -> Result<Self> {
        let mut cs = Self::new(dim);
        for l in linear {
            cs.push_linear(l)?;
        }
        Ok(cs)
    }

    pub fn push_linear(&mut self, ineq: LinearIneq) -> Result<()> {
        check_dim(self.dim, ineq.normal.len())?;
        self.linear.push(ineq);
        Ok(())
    }

    pub fn push_quadratic(&mut self, ineq: QuadIneq) -> Result<()> {
        check_dim(self.dim, ineq.center.len())?;
        self.quadratic.push(ineq);
        Ok(())
    }

    /// Largest constraint violation at `x`; nonpositive iff `x` is feasible.
    pub fn max_violation(&self, x: &Vector) -> f64 {
        let lin = self.linear.iter().map(|c| c.violation(x));
        let quad = self.quadratic.iter().map(|c| c.violation(x));
        lin.chain(quad).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// If every constraint is linear and touches a single coordinate, returns
    /// the equivalent box `(lower, upper)`.
    pub fn as_box(&self) -> Option<(Vector, Vector)> {
        if !self.quadratic.is_empty() {
            return None;
        }
        let mut lower = Vector::from_element(self.dim, f64::NEG_INFINITY);
        let mut upper = Vector::from_element(self.dim, f64::INFINITY);
        for c in &self.linear {
            let mut nz = c.normal.iter().enumerate().filter(|(_, v)| **v != 0.0);
            let (j, &a) = nz.next()?;
            if nz.next().is_some() {
                return None;
            }
            let t = c.bound / a;
            if a > 0.0 {
                upper[j] = upper[j].min(t);
            } else {
                lower[j] = lower[j].max(t);
            }
        }
        Some((lower, upper))
    }
}

/// Pulls a constraint set defined on the output of `map` back to its input
/// space: `x` satisfies the result iff `map(x)` satisfies `cs`.
pub fn compose_affine(cs: &ConstraintSet, map: &AffineMap) -> Result<ConstraintSet> {
    check_dim(cs.dim, map.output_dim())?;
    let a = &map.matrix;
    let mut out = ConstraintSet::new(map.input_dim());
    for c in &cs.linear {
        out.linear.push(LinearIneq {
            normal: a.transpose() * &c.normal,
            bound: c.bound - c.normal.dot(&map.offset),
        });
    }
    if !cs.quadratic.is_empty() {
        let pinv = a
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for q in &cs.quadratic {
            // Needs a preimage of the center: A·c' + b = c.
            let target = &q.center - &map.offset;
            let center = &pinv * &target;
            let residual = (a * &center - &target).amax();
            if residual > 1e-9 * (1.0 + target.amax()) {
                return Err(Error::InvalidArgument(
                    "quadratic constraint center not reachable through affine map".into(),
                ));
            }
            out.quadratic.push(QuadIneq {
                shape: a.transpose() * &q.shape * a,
                center,
                bound: q.bound,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    L1,
    SquaredL2,
    WeightedL1 {
        #[serde(with = "serde_util::vector")]
        weights: Vector,
    },
    Lp {
        p: f64,
    },
}

pub fn distance(a: &Vector, b: &Vector, metric: &Metric) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if !all_finite(a.iter()) || !all_finite(b.iter()) {
        return Err(Error::NonFinite("distance arguments"));
    }
    let diff = a - b;
    Ok(match metric {
        Metric::L1 => diff.lp_norm(1),
        Metric::SquaredL2 => diff.norm_squared(),
        Metric::WeightedL1 { weights } => {
            check_dim(a.len(), weights.len())?;
            if weights.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::InvalidArgument("weights must be positive".into()));
            }
            diff.iter().zip(weights.iter()).map(|(d, w)| w * d.abs()).sum()
        }
        Metric::Lp { p } => {
            if !(*p >= 1.0) {
                return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
            }
            if p.is_infinite() {
                diff.amax()
            } else {
                diff.iter().map(|d| d.abs().powf(*p)).sum::<f64>().powf(1.0 / p)
            }
        }
    })
}

/// Penalty on the deviation of a counterfactual from its origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    SquaredL2,
    WeightedL1 {
        #[serde(with = "serde_util::vector")]
        weights: Vector,
    },
}

impl Regularization {
    /// Plain Manhattan distance in `d` dimensions.
    pub fn l1(d: usize) -> Self {
        Regularization::WeightedL1 {
            weights: Vector::from_element(d, 1.0),
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            Regularization::SquaredL2 => Metric::SquaredL2,
            Regularization::WeightedL1 { weights } => Metric::WeightedL1 {
                weights: weights.clone(),
            },
        }
    }

    pub fn cost(&self, x: &Vector, origin: &Vector) -> Result<f64> {
        distance(x, origin, &self.metric())
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if let Regularization::WeightedL1 { weights } = self {
            check_dim(d, weights.len())?;
            if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::InvalidArgument(
                    "l1 weights must be strictly positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub origin: LabeledSample,
    pub target_label: usize,
    pub regularization: Regularization,
    /// Natural log of the density threshold; `None` requests a closest
    /// counterfactual.
    pub log_density_threshold: Option<f64>,
}

impl CounterfactualQuery {
    pub fn new(
        origin: LabeledSample,
        target_label: usize,
        regularization: Regularization,
        log_density_threshold: Option<f64>,
    ) -> Result<Self> {
        if target_label == origin.label {
            return Err(Error::InvalidArgument(
                "target label must differ from the origin label".into(),
            ));
        }
        regularization.validate(origin.dim())?;
        Ok(Self {
            origin,
            target_label,
            regularization,
            log_density_threshold,
        })
    }
}

/// Which convex piece produced a counterfactual: the index of the decision
/// region (leaf, prototype or polytope) and, for plausible counterfactuals,
/// the mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Branch {
    pub region: usize,
    pub component: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    #[serde(with = "serde_util::vector")]
    pub point: Vector,
    pub cost: f64,
    pub target_label: usize,
    pub feasible: bool,
    pub kkt_residual: f64,
    pub branch: Option<Branch>,
}

impl CounterfactualResult {
    pub fn infeasible(origin: &Vector, target_label: usize) -> Self {
        Self {
            point: origin.clone(),
            cost: f64::INFINITY,
            target_label,
            feasible: false,
            kkt_residual: f64::INFINITY,
            branch: None,
        }
    }
}
