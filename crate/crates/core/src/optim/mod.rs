//! Convex subproblem solvers: projections onto boxes, polytopes and
//! polytope ∩ ellipsoid, under squared-l2 or weighted-l1 cost.

mod lp;
mod qcqp;
mod qp;

use serde::{Deserialize, Serialize};

use crate::domain::Vector;
use crate::error::{check_dim, Error, Result};

pub use lp::solve_lp_l1;
pub use qcqp::{solve_qcqp, solve_qcqp_factored, solve_qclp_l1_factored, FactoredEllipsoid};
pub use qp::{project_polytope, solve_qp, Projection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            kkt_tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.kkt_tol > 0.0 && self.max_iter > 0) {
            return Err(Error::InvalidArgument(
                "solver tolerances and iteration limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub point: Vector,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl SolveOutcome {
    pub(crate) fn infeasible(x0: &Vector, iterations: usize) -> Self {
        Self {
            point: x0.clone(),
            objective: f64::INFINITY,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Euclidean projection onto `[lower, upper]`. The clamped point also
/// minimizes any weighted-l1 distance to `x0` over the box.
pub fn project_box(x0: &Vector, lower: &Vector, upper: &Vector) -> Result<Vector> {
    check_dim(x0.len(), lower.len())?;
    check_dim(x0.len(), upper.len())?;
    if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
        return Err(Error::Infeasible("empty box".into()));
    }
    Ok(Vector::from_iterator(
        x0.len(),
        x0.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(x, (l, u))| x.clamp(*l, *u)),
    ))
}
