//! Closest and plausible counterfactuals.
//!
//! The target region of a model is a union of convex pieces; for plausible
//! counterfactuals each target-class mixture component contributes one
//! ellipsoid. Every (piece, component) pair is a convex program and the
//! cheapest feasible solution wins, earliest branch first on ties.

use serde::{Deserialize, Serialize};

use crate::density::{component_constraint, ComponentConstraint, GmmDensity};
use crate::domain::{
    Branch, ConstraintSet, CounterfactualQuery, CounterfactualResult, Regularization, Vector,
};
use crate::error::{check_dim, Error, Result};
use crate::models::{DecisionRegion, LinearBinaryModel, Model};
use crate::optim::{
    project_box, solve_lp_l1, solve_qcqp_factored, solve_qclp_l1_factored, solve_qp,
    FactoredEllipsoid, SolveOutcome, SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfConfig {
    pub solver: SolverConfig,
    /// Step `η` inward along the active constraint normals after solving, so
    /// the result is strictly inside its region. `None` keeps the boundary.
    pub nudge: Option<f64>,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            nudge: None,
        }
    }
}

/// `x − (wᵀx + b)·w`: the orthogonal projection onto the hyperplane, which
/// is the closest point of the opposite class under the boundary convention.
/// Cost is reported in squared l2.
pub fn closest_cf_linear(x: &Vector, model: &LinearBinaryModel) -> Result<CounterfactualResult> {
    check_dim(model.weights.len(), x.len())?;
    let margin = model.decision(x);
    let point = x - &model.weights * margin;
    Ok(CounterfactualResult {
        cost: (&point - x).norm_squared(),
        point,
        target_label: 1 - model.predict(x),
        feasible: true,
        kkt_residual: 0.0,
        branch: Some(Branch {
            region: 0,
            component: None,
        }),
    })
}

/// The feasible target-class ellipsoids of a mixture at threshold
/// `ln δ̄`, tagged with their component index.
pub fn target_ellipsoids(
    gmm: &GmmDensity,
    target: usize,
    log_threshold: f64,
) -> Result<Vec<(usize, FactoredEllipsoid)>> {
    Ok(gmm
        .components(target)?
        .iter()
        .enumerate()
        .filter_map(|(k, c)| match component_constraint(c, log_threshold) {
            ComponentConstraint::Feasible(e) => Some((k, e)),
            ComponentConstraint::Infeasible => None,
        })
        .collect())
}

/// Everything about one target class that does not depend on the query
/// point, so it can be reused across many queries.
#[derive(Debug, Clone)]
pub struct TargetProblem {
    pub target: usize,
    pub dim: usize,
    pub regions: Vec<DecisionRegion>,
    pub ellipsoids: Vec<(usize, FactoredEllipsoid)>,
}

impl TargetProblem {
    pub fn closest(model: &Model, target: usize) -> Result<Self> {
        Ok(Self {
            target,
            dim: model.dim(),
            regions: model.decision_regions(target)?,
            ellipsoids: Vec::new(),
        })
    }

    pub fn plausible(
        model: &Model,
        target: usize,
        gmm: &GmmDensity,
        log_threshold: f64,
    ) -> Result<Self> {
        check_dim(model.dim(), gmm.dim())?;
        if !log_threshold.is_finite() {
            return Err(Error::NonFinite("density threshold"));
        }
        Ok(Self {
            target,
            dim: model.dim(),
            regions: model.decision_regions(target)?,
            ellipsoids: target_ellipsoids(gmm, target, log_threshold)?,
        })
    }

    /// Minimum-cost point of the target region.
    pub fn solve_closest(
        &self,
        x: &Vector,
        reg: &Regularization,
        cfg: &CfConfig,
    ) -> Result<CounterfactualResult> {
        check_dim(self.dim, x.len())?;
        reg.validate(self.dim)?;
        let mut best = Best::new(x, self.target);
        for r in &self.regions {
            let out = solve_region(x, &r.constraints, reg, &cfg.solver)?;
            best.offer(
                x,
                out,
                reg,
                Branch {
                    region: r.id,
                    component: None,
                },
                &r.constraints,
                None,
            )?;
        }
        best.finish(x, reg, cfg)
    }

    /// Minimum-cost point of the target region that one weighted component
    /// alone already gives density at least `δ̄`.
    pub fn solve_plausible(
        &self,
        x: &Vector,
        reg: &Regularization,
        cfg: &CfConfig,
    ) -> Result<CounterfactualResult> {
        check_dim(self.dim, x.len())?;
        reg.validate(self.dim)?;
        let mut best = Best::new(x, self.target);
        if self.ellipsoids.is_empty() {
            return Ok(best.into_result());
        }

        // Each branch costs at least as much as its region alone and its
        // ellipsoid alone; visiting cheap bounds first lets the rest be skipped.
        let region_lb: Vec<f64> = self
            .regions
            .iter()
            .map(|r| {
                let out = solve_region(x, &r.constraints, reg, &cfg.solver)?;
                Ok(if out.is_optimal() {
                    lower_bound(&out)
                } else {
                    f64::INFINITY
                })
            })
            .collect::<Result<_>>()?;
        let ell_lb: Vec<f64> = self
            .ellipsoids
            .iter()
            .map(|(_, e)| lower_bound(&solve_ellipsoid(x, &[], e, reg, &cfg.solver)))
            .collect();

        let mut order: Vec<(f64, usize, usize)> = Vec::new();
        for (ri, rlb) in region_lb.iter().enumerate() {
            for (ei, elb) in ell_lb.iter().enumerate() {
                let lb = rlb.max(*elb);
                if lb.is_finite() {
                    order.push((lb, ri, ei));
                }
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

        for (lb, ri, ei) in order {
            if lb > best.cost * (1.0 + 1e-9) + 1e-12 {
                break;
            }
            let region = &self.regions[ri];
            let (k, ell) = &self.ellipsoids[ei];
            let out = solve_ellipsoid(x, &region.constraints.linear, ell, reg, &cfg.solver);
            best.offer(
                x,
                out,
                reg,
                Branch {
                    region: region.id,
                    component: Some(*k),
                },
                &region.constraints,
                Some(ell),
            )?;
        }
        best.finish(x, reg, cfg)
    }
}

/// Objective value that no feasible point can beat, up to solver tolerance.
fn lower_bound(out: &SolveOutcome) -> f64 {
    if !out.is_optimal() {
        return f64::INFINITY;
    }
    (out.objective - out.kkt_residual.max(0.0)).max(0.0) * (1.0 - 1e-6)
}

fn l1_weights(reg: &Regularization) -> Option<&Vector> {
    match reg {
        Regularization::SquaredL2 => None,
        Regularization::WeightedL1 { weights } => Some(weights),
    }
}

fn solve_region(
    x: &Vector,
    cs: &ConstraintSet,
    reg: &Regularization,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    // Both costs are separable, so clamping is optimal on boxes.
    if let Some((lo, hi)) = cs.as_box() {
        return match project_box(x, &lo, &hi) {
            Ok(p) => Ok(SolveOutcome {
                objective: reg.cost(&p, x)?,
                point: p,
                status: crate::optim::SolveStatus::Optimal,
                kkt_residual: 0.0,
                iterations: 0,
            }),
            Err(Error::Infeasible(_)) => Ok(SolveOutcome {
                point: x.clone(),
                objective: f64::INFINITY,
                status: crate::optim::SolveStatus::Infeasible,
                kkt_residual: f64::INFINITY,
                iterations: 0,
            }),
            Err(e) => Err(e),
        };
    }
    match l1_weights(reg) {
        None => solve_qp(x, cs, cfg),
        Some(w) => solve_lp_l1(x, w, cs, cfg),
    }
}

fn solve_ellipsoid(
    x: &Vector,
    linear: &[crate::domain::LinearIneq],
    ell: &FactoredEllipsoid,
    reg: &Regularization,
    cfg: &SolverConfig,
) -> SolveOutcome {
    match l1_weights(reg) {
        None => solve_qcqp_factored(x, linear, ell, cfg),
        Some(w) => solve_qclp_l1_factored(x, w, linear, ell, cfg),
    }
}

struct Best<'a> {
    target: usize,
    cost: f64,
    result: Option<(SolveOutcome, Branch, &'a ConstraintSet, Option<&'a FactoredEllipsoid>)>,
    origin: Vector,
}

impl<'a> Best<'a> {
    fn new(x: &Vector, target: usize) -> Self {
        Self {
            target,
            cost: f64::INFINITY,
            result: None,
            origin: x.clone(),
        }
    }

    fn offer(
        &mut self,
        x: &Vector,
        out: SolveOutcome,
        reg: &Regularization,
        branch: Branch,
        cs: &'a ConstraintSet,
        ell: Option<&'a FactoredEllipsoid>,
    ) -> Result<()> {
        if !out.is_optimal() {
            return Ok(());
        }
        let cost = reg.cost(&out.point, x)?;
        let better = match &self.result {
            None => true,
            Some((_, b, _, _)) => cost < self.cost || (cost == self.cost && branch < *b),
        };
        if better {
            self.cost = cost;
            self.result = Some((out, branch, cs, ell));
        }
        Ok(())
    }

    fn into_result(self) -> CounterfactualResult {
        match self.result {
            None => CounterfactualResult::infeasible(&self.origin, self.target),
            Some((out, branch, _, _)) => CounterfactualResult {
                point: out.point,
                cost: self.cost,
                target_label: self.target,
                feasible: true,
                kkt_residual: out.kkt_residual,
                branch: Some(branch),
            },
        }
    }

    fn finish(self, x: &Vector, reg: &Regularization, cfg: &CfConfig) -> Result<CounterfactualResult> {
        let Some(eta) = cfg.nudge else {
            return Ok(self.into_result());
        };
        let (cs, ell) = match &self.result {
            Some((_, _, cs, ell)) => (*cs, *ell),
            None => return Ok(self.into_result()),
        };
        let mut res = self.into_result();
        res.point = nudge(&res.point, cs, ell, eta, cfg.solver.feas_tol);
        res.cost = reg.cost(&res.point, x)?;
        Ok(res)
    }
}

/// Moves `η` inward along the unit normals of every constraint active at `p`.
pub fn nudge(
    p: &Vector,
    cs: &ConstraintSet,
    ell: Option<&FactoredEllipsoid>,
    eta: f64,
    tol: f64,
) -> Vector {
    let mut dir = Vector::zeros(p.len());
    for c in &cs.linear {
        let norm = c.normal.norm();
        if norm > 0.0 && c.normal.dot(p) - c.bound > -tol * (1.0 + c.bound.abs()) {
            dir -= &c.normal / norm;
        }
    }
    if let Some(e) = ell {
        if e.excess(p) > -tol * (1.0 + e.bound) {
            // gradient of (x − μ)ᵀP(x − μ) is 2P(x − μ)
            let q = e.to_quad();
            let g = &q.shape * (p - &q.center);
            let n = g.norm();
            if n > 0.0 {
                dir -= g / n;
            }
        }
    }
    let n = dir.norm();
    if n == 0.0 {
        return p.clone();
    }
    p + dir * (eta / n)
}

/// Closest point classified as `target`; `x` itself when it already is.
pub fn closest_cf(
    x: &Vector,
    model: &Model,
    target: usize,
    reg: &Regularization,
    cfg: &CfConfig,
) -> Result<CounterfactualResult> {
    if model.predict(x)? == target {
        return Ok(unchanged(x, target));
    }
    TargetProblem::closest(model, target)?.solve_closest(x, reg, cfg)
}

/// Closest point classified as `target` with class density at least `δ̄`
/// (given as `ln δ̄`) through a single component.
pub fn plausible_cf(
    x: &Vector,
    model: &Model,
    target: usize,
    reg: &Regularization,
    gmm: &GmmDensity,
    log_threshold: f64,
    cfg: &CfConfig,
) -> Result<CounterfactualResult> {
    TargetProblem::plausible(model, target, gmm, log_threshold)?.solve_plausible(x, reg, cfg)
}

fn unchanged(x: &Vector, target: usize) -> CounterfactualResult {
    CounterfactualResult {
        point: x.clone(),
        cost: 0.0,
        target_label: target,
        feasible: true,
        kkt_residual: 0.0,
        branch: None,
    }
}

/// Answers a query: closest when it carries no density threshold, plausible
/// otherwise.
pub fn explain(
    query: &CounterfactualQuery,
    model: &Model,
    gmm: Option<&GmmDensity>,
    cfg: &CfConfig,
) -> Result<CounterfactualResult> {
    let x = &query.origin.features;
    match query.log_density_threshold {
        None => closest_cf(x, model, query.target_label, &query.regularization, cfg),
        Some(t) => {
            let gmm = gmm.ok_or_else(|| {
                Error::InvalidArgument("plausible query needs a density model".into())
            })?;
            plausible_cf(x, model, query.target_label, &query.regularization, gmm, t, cfg)
        }
    }
}

/// Whether `p` counts as class `target`: predicted so, or inside one of the
/// closed target pieces within `tol`.
pub fn is_valid(model: &Model, p: &Vector, target: usize, tol: f64) -> Result<bool> {
    if model.predict(p)? == target {
        return Ok(true);
    }
    Ok(model
        .decision_regions(target)?
        .iter()
        .any(|r| r.constraints.contains(p, tol)))
}
