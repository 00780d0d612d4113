use microlp::{ComparisonOp, OptimizationDirection, Problem};

use super::qp::linear_system;
use super::{SolveOutcome, SolveStatus, SolverConfig};
use crate::domain::{ConstraintSet, Matrix, Vector};
use crate::error::{check_dim, Error, Result};

/// Minimises `Σ wᵢ|xᵢ − x0ᵢ|` over the polytope of `cs`.
///
/// Solved as the linear program over `x = x0 + p − n` with `p, n ≥ 0`. The
/// reported `kkt_residual` is the duality gap against the dual program
/// `max λᵀ(A·x0 − b)  s.t.  |Aᵀλ| ≤ w, λ ≥ 0`.
pub fn solve_lp_l1(
    x0: &Vector,
    weights: &Vector,
    cs: &ConstraintSet,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_dim(cs.dim, x0.len())?;
    check_dim(cs.dim, weights.len())?;
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("l1 weights must be positive".into()));
    }
    if !cs.quadratic.is_empty() {
        return Err(Error::InvalidArgument(
            "solve_lp_l1 takes linear constraints only".into(),
        ));
    }
    let (a, b) = linear_system(cs);
    let slack = &b - &a * x0;
    if slack.iter().all(|s| *s >= 0.0) {
        return Ok(SolveOutcome {
            point: x0.clone(),
            objective: 0.0,
            status: SolveStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    match primal(x0, weights, &a, &slack) {
        Some(point) => {
            let objective = weighted_l1(&point, x0, weights);
            let dual = dual_value(weights, &a, &slack).unwrap_or(f64::NEG_INFINITY);
            let violation = (&a * &point - &b).max().max(0.0);
            Ok(SolveOutcome {
                point,
                objective,
                status: SolveStatus::Optimal,
                kkt_residual: (objective - dual).abs().max(violation),
                iterations: 1,
            })
        }
        None => Ok(SolveOutcome::infeasible(x0, 1)),
    }
}

pub(crate) fn weighted_l1(x: &Vector, x0: &Vector, w: &Vector) -> f64 {
    x.iter()
        .zip(x0.iter())
        .zip(w.iter())
        .map(|((a, b), w)| w * (a - b).abs())
        .sum()
}

/// Optimal `x` or `None` when the polytope is empty.
pub(crate) fn primal(x0: &Vector, w: &Vector, a: &Matrix, slack: &Vector) -> Option<Vector> {
    let d = x0.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let pos: Vec<_> = (0..d).map(|j| lp.add_var(w[j], (0.0, f64::INFINITY))).collect();
    let neg: Vec<_> = (0..d).map(|j| lp.add_var(w[j], (0.0, f64::INFINITY))).collect();
    for i in 0..a.nrows() {
        let expr: Vec<_> = (0..d)
            .filter(|&j| a[(i, j)] != 0.0)
            .flat_map(|j| [(pos[j], a[(i, j)]), (neg[j], -a[(i, j)])])
            .collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, slack[i]);
    }
    let sol = lp.solve().ok()?.into_solution().ok()?;
    Some(Vector::from_fn(d, |j, _| {
        x0[j] + sol.var_value(pos[j]) - sol.var_value(neg[j])
    }))
}

fn dual_value(w: &Vector, a: &Matrix, slack: &Vector) -> Option<f64> {
    let (m, d) = a.shape();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let lam: Vec<_> = (0..m)
        .map(|i| lp.add_var(-slack[i], (0.0, f64::INFINITY)))
        .collect();
    for j in 0..d {
        let expr: Vec<_> = (0..m)
            .filter(|&i| a[(i, j)] != 0.0)
            .map(|i| (lam[i], a[(i, j)]))
            .collect();
        if expr.is_empty() {
            continue;
        }
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, w[j]);
        lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, -w[j]);
    }
    Some(lp.solve().ok()?.into_solution().ok()?.objective())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LinearIneq;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn halfspace_l1() {
        let cs = ConstraintSet::with_linear(2, vec![LinearIneq::new(v(&[1., 0.]), 0.)]).unwrap();
        let out = solve_lp_l1(&v(&[2., 3.]), &v(&[1., 1.]), &cs, &SolverConfig::default()).unwrap();
        assert!((out.point - v(&[0., 3.])).amax() < 1e-9);
        assert!((out.objective - 2.0).abs() < 1e-9);
        assert!(out.kkt_residual < 1e-9);
    }

    #[test]
    fn feasible_start_costs_nothing() {
        let cs = ConstraintSet::with_linear(2, vec![LinearIneq::new(v(&[1., 0.]), 0.)]).unwrap();
        let out = solve_lp_l1(&v(&[-2., 3.]), &v(&[1., 1.]), &cs, &SolverConfig::default()).unwrap();
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn weights_steer_the_cheap_coordinate() {
        // x1 + x2 <= 0 from (1, 1): moving x1 costs 1, moving x2 costs 10.
        let cs = ConstraintSet::with_linear(2, vec![LinearIneq::new(v(&[1., 1.]), 0.)]).unwrap();
        let out = solve_lp_l1(&v(&[1., 1.]), &v(&[1., 10.]), &cs, &SolverConfig::default()).unwrap();
        assert!((out.point - v(&[-1., 1.])).amax() < 1e-9);
        assert!((out.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_polytope() {
        let cs = ConstraintSet::with_linear(
            1,
            vec![LinearIneq::new(v(&[1.]), 0.), LinearIneq::new(v(&[-1.]), -1.)],
        )
        .unwrap();
        let out = solve_lp_l1(&v(&[3.]), &v(&[1.]), &cs, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_nonpositive_weights() {
        let cs = ConstraintSet::new(2);
        assert!(solve_lp_l1(&v(&[0., 0.]), &v(&[1., 0.]), &cs, &SolverConfig::default()).is_err());
    }
}
