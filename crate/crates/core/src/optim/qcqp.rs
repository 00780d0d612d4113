//! Projection onto the intersection of a polytope and one ellipsoid.
//!
//! Squared-l2 cost: for a multiplier `λ ≥ 0` on the quadratic constraint the
//! Lagrangian subproblem `min ‖x − x0‖² + λ(x − μ)ᵀP(x − μ)  s.t.  Ax ≤ b` is a
//! Euclidean projection after the change of variables `y = (I + λΛ)^½ Vᵀx`,
//! where `P = VΛVᵀ`. The quadratic constraint value is nonincreasing in `λ`,
//! so `λ` is found by a safeguarded root search on `log λ`.
//!
//! Weighted-l1 cost: Kelley cutting planes on the ellipsoid with a feasible
//! upper bound from a line search towards a feasible anchor point.

use nalgebra::SymmetricEigen;

use super::lp::{primal, weighted_l1};
use super::qp::{linear_system, min_max_violation, project_polytope};
use super::{SolveOutcome, SolveStatus, SolverConfig};
use crate::domain::{ConstraintSet, LinearIneq, Matrix, QuadIneq, Vector};
use crate::error::{check_dim, Error, Result};

/// An ellipsoid `(x − μ)ᵀP(x − μ) ≤ c` with `P = V·diag(curvature)·Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredEllipsoid {
    pub basis: Matrix,
    pub curvature: Vector,
    pub center: Vector,
    pub bound: f64,
}

impl FactoredEllipsoid {
    pub fn from_quad(q: &QuadIneq) -> Result<Self> {
        let sym = (&q.shape + q.shape.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let scale = eig.eigenvalues.amax().max(1.0);
        if eig.eigenvalues.iter().any(|l| *l < -1e-10 * scale) {
            return Err(Error::InvalidArgument(
                "quadratic constraint shape is not positive semidefinite".into(),
            ));
        }
        Ok(Self {
            basis: eig.eigenvectors,
            curvature: eig.eigenvalues.map(|l| l.max(0.0)),
            center: q.center.clone(),
            bound: q.bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn to_quad(&self) -> QuadIneq {
        let shape = &self.basis * Matrix::from_diagonal(&self.curvature) * self.basis.transpose();
        QuadIneq {
            shape,
            center: self.center.clone(),
            bound: self.bound,
        }
    }

    /// Constraint value minus bound, for a point already in eigen coordinates.
    fn excess_rotated(&self, z: &Vector, zc: &Vector) -> f64 {
        z.iter()
            .zip(zc.iter())
            .zip(self.curvature.iter())
            .map(|((zi, ci), l)| l * (zi - ci) * (zi - ci))
            .sum::<f64>()
            - self.bound
    }

    pub fn excess(&self, x: &Vector) -> f64 {
        let z = self.basis.tr_mul(x);
        let zc = self.basis.tr_mul(&self.center);
        self.excess_rotated(&z, &zc)
    }
}

/// Minimises `‖x − x0‖²` over a constraint set with exactly one quadratic
/// constraint.
pub fn solve_qcqp(x0: &Vector, cs: &ConstraintSet, cfg: &SolverConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_dim(cs.dim, x0.len())?;
    if cs.quadratic.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "solve_qcqp expects one quadratic constraint, got {}",
            cs.quadratic.len()
        )));
    }
    let ell = FactoredEllipsoid::from_quad(&cs.quadratic[0])?;
    Ok(solve_qcqp_factored(x0, &cs.linear, &ell, cfg))
}

/// Polytope data rotated into the ellipsoid's eigenbasis.
struct Rotated {
    av: Matrix,
    b: Vector,
    z0: Vector,
    zc: Vector,
}

impl Rotated {
    fn new(x0: &Vector, linear: &[LinearIneq], ell: &FactoredEllipsoid) -> Self {
        let cs = ConstraintSet {
            dim: x0.len(),
            linear: linear.to_vec(),
            quadratic: Vec::new(),
        };
        let (a, b) = linear_system(&cs);
        Self {
            av: a * &ell.basis,
            b,
            z0: ell.basis.tr_mul(x0),
            zc: ell.basis.tr_mul(&ell.center),
        }
    }

    /// Lagrangian subproblem at multiplier `lam`: point in eigen coordinates
    /// and linear-constraint multipliers.
    fn solve_at(
        &self,
        lam: f64,
        ell: &FactoredEllipsoid,
        cfg: &SolverConfig,
    ) -> Option<(Vector, Vector, usize)> {
        let sd = ell.curvature.map(|l| (1.0 + lam * l).sqrt());
        let y0 = Vector::from_fn(sd.len(), |i, _| {
            (self.z0[i] + lam * ell.curvature[i] * self.zc[i]) / sd[i]
        });
        let mut c = self.av.clone();
        for (j, mut col) in c.column_iter_mut().enumerate() {
            col /= sd[j];
        }
        let proj = project_polytope(&y0, &c, &self.b, cfg);
        if proj.status == SolveStatus::Infeasible {
            return None;
        }
        let z = proj.point.component_div(&sd);
        Some((z, proj.multipliers, proj.iterations))
    }

    /// Minimiser of the quadratic constraint over the polytope (eigen
    /// coordinates), or `None` if the polytope is empty.
    fn phase_one(&self, ell: &FactoredEllipsoid, cfg: &SolverConfig) -> Option<Vector> {
        let floor = 1e-12 * ell.curvature.amax().max(1e-300);
        let root = ell.curvature.map(|l| l.max(floor).sqrt());
        let mut c = self.av.clone();
        for (j, mut col) in c.column_iter_mut().enumerate() {
            col /= root[j];
        }
        let d = &self.b - &self.av * &self.zc;
        let proj = project_polytope(&Vector::zeros(root.len()), &c, &d, cfg);
        if proj.status == SolveStatus::Infeasible {
            return None;
        }
        Some(&self.zc + proj.point.component_div(&root))
    }
}

fn polytope_is_empty(rot: &Rotated, cfg: &SolverConfig) -> bool {
    !matches!(min_max_violation(&rot.av, &rot.b), Some(t) if t <= cfg.feas_tol)
}

pub fn solve_qcqp_factored(
    x0: &Vector,
    linear: &[LinearIneq],
    ell: &FactoredEllipsoid,
    cfg: &SolverConfig,
) -> SolveOutcome {
    if ell.bound < 0.0 {
        return SolveOutcome::infeasible(x0, 0);
    }
    let rot = Rotated::new(x0, linear, ell);
    let g = |z: &Vector| ell.excess_rotated(z, &rot.zc);
    let tol_g = cfg.feas_tol * (1.0 + ell.bound);
    let mut iterations = 0;

    let finish = |z: Vector, u: Vector, lam: f64, iterations: usize, status: SolveStatus| {
        let x = &ell.basis * &z;
        let gz = ell.excess_rotated(&z, &rot.zc);
        let stationarity = (&z - &rot.z0
            + (&z - &rot.zc).component_mul(&ell.curvature) * lam
            + rot.av.tr_mul(&u))
        .amax();
        let slack = &rot.av * &z - &rot.b;
        let mut kkt = stationarity.max(gz.max(0.0)).max((lam * gz).abs());
        for (s, ui) in slack.iter().zip(u.iter()) {
            kkt = kkt.max(s.max(0.0)).max((ui * s).abs());
        }
        SolveOutcome {
            objective: (&x - x0).norm_squared(),
            point: x,
            status,
            kkt_residual: kkt,
            iterations,
        }
    };

    let Some((z_free, u_free, it)) = rot.solve_at(0.0, ell, cfg) else {
        if polytope_is_empty(&rot, cfg) {
            return SolveOutcome::infeasible(x0, 0);
        }
        // Within tolerance of feasible: relax and retry.
        let mut relaxed = linear.to_vec();
        for c in &mut relaxed {
            c.bound += cfg.feas_tol * c.normal.norm();
        }
        return solve_qcqp_factored(x0, &relaxed, ell, cfg);
    };
    iterations += it;
    let g_free = g(&z_free);
    if g_free <= 0.0 {
        return finish(z_free, u_free, 0.0, iterations, SolveStatus::Optimal);
    }

    let Some(z_anchor) = rot.phase_one(ell, cfg) else {
        return SolveOutcome::infeasible(x0, iterations);
    };
    if g(&z_anchor) > tol_g {
        return SolveOutcome::infeasible(x0, iterations);
    }

    // Bracket the multiplier.
    let lmax = ell.curvature.amax();
    let (mut lo, mut g_lo) = (0.0_f64, g_free);
    let mut lam = 1.0 / lmax;
    let mut hi_state = None;
    for _ in 0..80 {
        let Some((z, u, it)) = rot.solve_at(lam, ell, cfg) else {
            break;
        };
        iterations += it;
        let gz = g(&z);
        if gz <= 0.0 {
            hi_state = Some((lam, gz, z, u));
            break;
        }
        lo = lam;
        g_lo = gz;
        lam *= 10.0;
    }
    let Some((mut hi, mut g_hi, mut z_hi, mut u_hi)) = hi_state else {
        // The intersection is (numerically) a single point.
        let u = Vector::zeros(rot.b.len());
        let mut out = finish(z_anchor, u, 0.0, iterations, SolveStatus::Optimal);
        out.kkt_residual = 0.0;
        return out;
    };

    // Anderson–Björck regula falsi on log λ, bisection when the bracket stalls.
    // `g_lo`/`g_hi` are the scaled secant values; `true_hi` is g at `hi`.
    let mut true_hi = g_hi;
    let mut side = 0i8;
    for step in 0..200 {
        let settled = -true_hi <= tol_g && hi * -true_hi <= 0.1 * cfg.kkt_tol;
        if settled || (lo > 0.0 && hi / lo - 1.0 < 1e-13) || iterations > cfg.max_iter {
            break;
        }
        let mid = if lo == 0.0 {
            hi * 0.5
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            let secant = a + (b - a) * g_lo / (g_lo - g_hi);
            let width = b - a;
            let t = if step % 4 == 3 || !(secant > a + 0.01 * width && secant < b - 0.01 * width)
            {
                0.5 * (a + b)
            } else {
                secant
            };
            t.exp()
        };
        let Some((z, u, it)) = rot.solve_at(mid, ell, cfg) else {
            break;
        };
        iterations += it;
        let gz = g(&z);
        if gz <= 0.0 {
            if side == 1 {
                let m = 1.0 - gz / g_hi;
                g_lo *= if m > 0.0 { m } else { 0.5 };
            }
            hi = mid;
            g_hi = gz;
            true_hi = gz;
            z_hi = z;
            u_hi = u;
            side = 1;
        } else {
            if side == -1 {
                let m = 1.0 - gz / g_lo;
                g_hi *= if m > 0.0 { m } else { 0.5 };
            }
            lo = mid;
            g_lo = gz;
            side = -1;
        }
    }
    let status = if iterations > cfg.max_iter {
        SolveStatus::MaxIter
    } else {
        SolveStatus::Optimal
    };
    finish(z_hi, u_hi, hi, iterations, status)
}

/// Minimises `Σ wᵢ|xᵢ − x0ᵢ|` over polytope ∩ ellipsoid.
///
/// Log-barrier interior-point method on the epigraph form `min wᵀt` with
/// `|x − x0| ≤ t`; the `t` block of each Newton system is diagonal and is
/// eliminated, leaving one `d × d` solve per step. The returned point is
/// strictly feasible and `kkt_residual` bounds its suboptimality.
pub fn solve_qclp_l1_factored(
    x0: &Vector,
    weights: &Vector,
    linear: &[LinearIneq],
    ell: &FactoredEllipsoid,
    cfg: &SolverConfig,
) -> SolveOutcome {
    if ell.bound < 0.0 {
        return SolveOutcome::infeasible(x0, 0);
    }
    let cs = ConstraintSet {
        dim: x0.len(),
        linear: linear.to_vec(),
        quadratic: Vec::new(),
    };
    let (a, b) = linear_system(&cs);
    if (&a * x0 - &b).iter().all(|s| *s <= 0.0) && ell.excess(x0) <= 0.0 {
        return SolveOutcome {
            point: x0.clone(),
            objective: 0.0,
            status: SolveStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        };
    }
    let rot = Rotated::new(x0, linear, ell);
    let Some(z_anchor) = rot.phase_one(ell, cfg) else {
        return SolveOutcome::infeasible(x0, 0);
    };
    if ell.excess_rotated(&z_anchor, &rot.zc) > cfg.feas_tol * (1.0 + ell.bound) {
        return SolveOutcome::infeasible(x0, 0);
    }
    match strict_interior(x0, linear, ell, cfg) {
        Some(start) => barrier_l1(x0, weights, &a, &b, ell, start, cfg),
        None => {
            // No room for a barrier: the set is (numerically) the anchor.
            let anchor = &ell.basis * &z_anchor;
            let cost = weighted_l1(&anchor, x0, weights);
            let lower = primal(x0, weights, &a, &(&b - &a * x0))
                .map(|p| weighted_l1(&p, x0, weights))
                .unwrap_or(0.0);
            SolveOutcome {
                point: anchor,
                objective: cost,
                status: SolveStatus::Optimal,
                kkt_residual: (cost - lower).max(0.0),
                iterations: 0,
            }
        }
    }
}

/// A point strictly inside polytope ∩ ellipsoid, from projecting `x0` onto
/// progressively less shrunken copies of the set.
fn strict_interior(
    x0: &Vector,
    linear: &[LinearIneq],
    ell: &FactoredEllipsoid,
    cfg: &SolverConfig,
) -> Option<Vector> {
    let radius = (ell.bound / ell.curvature.amax().max(1e-300)).sqrt();
    for eta in [0.1, 1e-3, 1e-6] {
        let shrunk: Vec<LinearIneq> = linear
            .iter()
            .map(|c| LinearIneq {
                normal: c.normal.clone(),
                bound: c.bound - eta * radius * c.normal.norm(),
            })
            .collect();
        let inner = FactoredEllipsoid {
            bound: ell.bound * (1.0 - eta) * (1.0 - eta),
            ..ell.clone()
        };
        let out = solve_qcqp_factored(x0, &shrunk, &inner, cfg);
        if out.is_optimal()
            && ell.excess(&out.point) < 0.0
            && linear.iter().all(|c| c.normal.dot(&out.point) < c.bound)
        {
            return Some(out.point);
        }
    }
    None
}

fn barrier_l1(
    x0: &Vector,
    w: &Vector,
    a: &Matrix,
    b: &Vector,
    ell: &FactoredEllipsoid,
    start: Vector,
    cfg: &SolverConfig,
) -> SolveOutcome {
    let d = x0.len();
    let p = &ell.basis * Matrix::from_diagonal(&ell.curvature) * ell.basis.transpose();
    let m = (2 * d + a.nrows() + 1) as f64;
    let mut x = start;
    let mut t = (&x - x0).map(|u| u.abs());
    let margin = 1e-2 * (1.0 + t.amax());
    t.add_scalar_mut(margin);

    let mut tau = m / w.dot(&t).max(1e-12);
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;
    'outer: for _ in 0..60 {
        for _ in 0..100 {
            if iterations >= cfg.max_iter {
                break 'outer;
            }
            iterations += 1;
            let u = &x - x0;
            let lo = &t - &u;
            let hi = &t + &u;
            let al = lo.map(|v| 1.0 / v);
            let be = hi.map(|v| 1.0 / v);
            let s = b - a * &x;
            let inv_s = s.map(|si| 1.0 / si);
            let off = &x - &ell.center;
            let pg = &p * &off;
            let r = ell.bound - off.dot(&pg);
            let grad_g = &pg * 2.0;

            let g_t = w * tau - &al - &be;
            let g_x = &al - &be + a.tr_mul(&inv_s) + &grad_g / r;
            let h_tt = Vector::from_fn(d, |j, _| al[j] * al[j] + be[j] * be[j]);
            let h_xt = Vector::from_fn(d, |j, _| be[j] * be[j] - al[j] * al[j]);

            let mut scaled = a.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= inv_s[i];
            }
            let mut schur = scaled.tr_mul(&scaled) + &p * (2.0 / r) + &grad_g * grad_g.transpose() / (r * r);
            for j in 0..d {
                schur[(j, j)] += h_tt[j] - h_xt[j] * h_xt[j] / h_tt[j];
            }
            let rhs = -&g_x + h_xt.component_mul(&g_t).component_div(&h_tt);
            let dx = match schur.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => match schur.lu().solve(&rhs) {
                    Some(v) => v,
                    None => break 'outer,
                },
            };
            let dt = (-&g_t - h_xt.component_mul(&dx)).component_div(&h_tt);
            let decrement = -(g_x.dot(&dx) + g_t.dot(&dt));
            if !(decrement > 1e-10) {
                break;
            }

            // Every barrier argument is affine in the step except the
            // ellipsoid slack, which is quadratic; all are evaluated in closed
            // form along the ray.
            let d_lo = &dt - &dx;
            let d_hi = &dt + &dx;
            let ds = -(a * &dx);
            let pdx = &p * &dx;
            let (qa, qb) = (dx.dot(&pdx), off.dot(&pdx));
            let mut max_step = f64::INFINITY;
            for (v, dv) in lo.iter().chain(hi.iter()).chain(s.iter()).zip(
                d_lo.iter().chain(d_hi.iter()).chain(ds.iter()),
            ) {
                if *dv < 0.0 {
                    max_step = max_step.min(-v / dv);
                }
            }
            if qa > 0.0 {
                max_step = max_step.min((-qb + (qb * qb + qa * r).sqrt()) / qa);
            } else if qb > 0.0 {
                max_step = max_step.min(r / (2.0 * qb));
            }
            let along = |step: f64| -> Option<f64> {
                let mut v = tau * (w.dot(&t) + step * w.dot(&dt));
                for (x, dx) in lo.iter().chain(hi.iter()).chain(s.iter()).zip(
                    d_lo.iter().chain(d_hi.iter()).chain(ds.iter()),
                ) {
                    let y = x + step * dx;
                    if !(y > 0.0) {
                        return None;
                    }
                    v -= y.ln();
                }
                let rr = r - step * (2.0 * qb + step * qa);
                if !(rr > 0.0) {
                    return None;
                }
                Some(v - rr.ln())
            };
            let Some(f0) = along(0.0) else {
                break 'outer;
            };
            let mut step = (0.99 * max_step).min(1.0);
            let accepted = loop {
                if step < 1e-14 {
                    break false;
                }
                if let Some(f) = along(step) {
                    if f <= f0 - 0.01 * step * decrement {
                        break true;
                    }
                }
                step *= 0.5;
            };
            if !accepted {
                break;
            }
            x += &dx * step;
            t += &dt * step;
        }
        let cost = weighted_l1(&x, x0, w);
        if m / tau <= 0.1 * cfg.kkt_tol * (1.0 + cost) {
            status = SolveStatus::Optimal;
            break;
        }
        tau *= 20.0;
    }
    SolveOutcome {
        objective: weighted_l1(&x, x0, w),
        point: x,
        status,
        kkt_residual: m / tau,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::solve_qp;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn ball(d: usize, center: &[f64], r2: f64) -> QuadIneq {
        QuadIneq::new(Matrix::identity(d, d), v(center), r2).unwrap()
    }

    #[test]
    fn ball_projection_without_linear_constraints() {
        let mut cs = ConstraintSet::new(2);
        cs.push_quadratic(ball(2, &[0., 0.], 1.0)).unwrap();
        let out = solve_qcqp(&v(&[3., 0.]), &cs, &SolverConfig::default()).unwrap();
        assert!(out.is_optimal());
        assert!((&out.point - v(&[1., 0.])).amax() < 1e-7, "{}", out.point);
        assert!(out.kkt_residual <= 1e-6, "{}", out.kkt_residual);
    }

    #[test]
    fn interior_point_is_returned() {
        let mut cs = ConstraintSet::new(2);
        cs.push_quadratic(ball(2, &[0., 0.], 4.0)).unwrap();
        cs.push_linear(LinearIneq::new(v(&[1., 0.]), 1.0)).unwrap();
        let x0 = v(&[0.5, 0.5]);
        let out = solve_qcqp(&x0, &cs, &SolverConfig::default()).unwrap();
        assert_eq!(out.point, x0);
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn ball_and_halfspace() {
        // Unit ball at origin, x1 >= 0.5, start at (-2, 0): answer (0.5, 0).
        let mut cs = ConstraintSet::new(2);
        cs.push_quadratic(ball(2, &[0., 0.], 1.0)).unwrap();
        cs.push_linear(LinearIneq::new(v(&[-1., 0.]), -0.5)).unwrap();
        let out = solve_qcqp(&v(&[-2., 0.]), &cs, &SolverConfig::default()).unwrap();
        assert!((&out.point - v(&[0.5, 0.])).amax() < 1e-7, "{}", out.point);
    }

    #[test]
    fn disjoint_ball_and_halfspace_is_infeasible() {
        let mut cs = ConstraintSet::new(2);
        cs.push_quadratic(ball(2, &[0., 0.], 1.0)).unwrap();
        cs.push_linear(LinearIneq::new(v(&[-1., 0.]), -2.0)).unwrap();
        let out = solve_qcqp(&v(&[0., 0.]), &cs, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        let mut neg = ConstraintSet::new(1);
        neg.push_quadratic(ball(1, &[0.], -1.0)).unwrap();
        let out = solve_qcqp(&v(&[0.]), &neg, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn huge_ball_matches_qp() {
        let lin = vec![
            LinearIneq::new(v(&[1., 1., 0.]), -1.0),
            LinearIneq::new(v(&[0., -1., 2.]), 0.5),
        ];
        let x0 = v(&[2., 1., 3.]);
        let mut cs = ConstraintSet::with_linear(3, lin.clone()).unwrap();
        let qp = solve_qp(&x0, &cs, &SolverConfig::default()).unwrap();
        cs.push_quadratic(ball(3, &[0., 0., 0.], 1e12)).unwrap();
        let qc = solve_qcqp(&x0, &cs, &SolverConfig::default()).unwrap();
        assert!((qp.point - qc.point).amax() < 1e-9);
    }

    #[test]
    fn thin_ellipsoid_stays_feasible() {
        // Needle along x1 with curvature 1e6 in x2.
        let shape = Matrix::from_diagonal(&v(&[1.0, 1e6]));
        let mut cs = ConstraintSet::new(2);
        cs.push_quadratic(QuadIneq::new(shape, v(&[0., 0.]), 1.0).unwrap()).unwrap();
        cs.push_linear(LinearIneq::new(v(&[-1., 0.]), -0.2)).unwrap();
        let out = solve_qcqp(&v(&[-3., 4.]), &cs, &SolverConfig::default()).unwrap();
        assert!(out.is_optimal());
        assert!(cs.max_violation(&out.point) <= 1e-9, "{}", cs.max_violation(&out.point));
        assert!(out.point[1].abs() < 1e-3 + 1e-9);
    }

    #[test]
    fn l1_ball_and_halfspace() {
        // Unit ball at origin, start (3, 0): l1-closest point is (1, 0).
        let ell = FactoredEllipsoid::from_quad(&ball(2, &[0., 0.], 1.0)).unwrap();
        let out = solve_qclp_l1_factored(
            &v(&[3., 0.]),
            &v(&[1., 1.]),
            &[],
            &ell,
            &SolverConfig::default(),
        );
        assert!(out.is_optimal());
        assert!((out.objective - 2.0).abs() < 1e-5, "{}", out.objective);
        assert!(ell.excess(&out.point) <= 0.0);
    }

    #[test]
    fn rejects_indefinite_shape() {
        let q = QuadIneq::new(Matrix::from_diagonal(&v(&[1.0, -1.0])), v(&[0., 0.]), 1.0).unwrap();
        assert!(FactoredEllipsoid::from_quad(&q).is_err());
    }
}
