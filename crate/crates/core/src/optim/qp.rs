//! Euclidean projection onto a polytope with a dual active-set method
//! (Goldfarb–Idnani, specialised to an identity Hessian).
//!
//! The solver starts from the unconstrained minimiser and adds violated
//! constraints one at a time while keeping the iterate dual feasible. The
//! active constraint normals are kept in a QR factorisation `N = J·[R; 0]`
//! updated with Givens rotations. Primal infeasibility shows up as a step
//! that no constraint can bound.

use nalgebra::DMatrix;

use super::{SolveOutcome, SolveStatus, SolverConfig};
use crate::domain::{ConstraintSet, Matrix, Vector};
use crate::error::{check_dim, Error, Result};

/// Result of `min ½‖y − y0‖²  s.t.  C·y ≤ d`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: Vector,
    /// One multiplier per row of `C`, satisfying `y − y0 + Cᵀu = 0`.
    pub multipliers: Vector,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl Projection {
    /// Stationarity, complementarity and primal feasibility, whichever is worst.
    pub fn kkt_residual(&self, y0: &Vector, c: &Matrix, d: &Vector) -> f64 {
        let stationarity = (&self.point - y0 + c.transpose() * &self.multipliers).amax();
        let slack = c * &self.point - d;
        let mut worst = stationarity;
        for (s, u) in slack.iter().zip(self.multipliers.iter()) {
            worst = worst.max(s.max(0.0)).max((u * s).abs());
        }
        worst
    }
}

const DEP_TOL: f64 = 1e-10;

/// Projects `y0` onto `{y : c·y ≤ d}`.
pub fn project_polytope(y0: &Vector, c: &Matrix, d: &Vector, cfg: &SolverConfig) -> Projection {
    let n = y0.len();
    let m = c.nrows();
    debug_assert_eq!(c.ncols(), n);
    debug_assert_eq!(d.len(), m);

    // GI works with n_iᵀy ≥ b_i on unit normals: n_i = −c_i/‖c_i‖.
    let mut rows: Vec<usize> = Vec::with_capacity(m);
    let mut scale = vec![0.0; m];
    for i in 0..m {
        let norm = c.row(i).norm();
        if norm < 1e-14 {
            if d[i] < -cfg.feas_tol {
                return Projection {
                    point: y0.clone(),
                    multipliers: Vector::zeros(m),
                    status: SolveStatus::Infeasible,
                    iterations: 0,
                };
            }
            continue;
        }
        scale[i] = norm;
        rows.push(i);
    }
    let k = rows.len();
    let normals = DMatrix::from_fn(k, n, |r, j| -c[(rows[r], j)] / scale[rows[r]]);
    let rhs = Vector::from_fn(k, |r, _| -d[rows[r]] / scale[rows[r]]);

    let mut x = y0.clone();
    let mut j_mat = Matrix::identity(n, n);
    let mut r_mat = Matrix::zeros(n, n);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let finish = |x: Vector, active: &[usize], u: &[f64], status, iterations| {
        let mut multipliers = Vector::zeros(m);
        for (&a, &ua) in active.iter().zip(u) {
            let i = rows[a];
            multipliers[i] = ua / scale[i];
        }
        Projection {
            point: x,
            multipliers,
            status,
            iterations,
        }
    };

    'outer: loop {
        // Step 1: most violated inactive constraint.
        let slack = &normals * &x - &rhs;
        let mut p = None;
        let mut worst = -cfg.feas_tol;
        for i in 0..k {
            if slack[i] < worst && !active.contains(&i) {
                worst = slack[i];
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return finish(x, &active, &u, SolveStatus::Optimal, iterations);
        };
        let np = normals.row(p).transpose();
        let mut up = 0.0;

        // Step 2: move until p is satisfied, dropping blocking constraints.
        loop {
            iterations += 1;
            if iterations > cfg.max_iter {
                return finish(x, &active, &u, SolveStatus::MaxIter, iterations);
            }
            let q = active.len();
            let dvec = j_mat.tr_mul(&np);
            let z = j_mat.columns(q, n - q) * dvec.rows(q, n - q);
            let r = back_substitute(&r_mat, &dvec, q);

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (jdx, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let ratio = u[jdx] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(jdx);
                    }
                }
            }
            let znp = dvec.rows(q, n - q).norm_squared();
            let sp = np.dot(&x) - rhs[p];
            let t2 = if znp.sqrt() > DEP_TOL {
                -sp / znp
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                return finish(x, &active, &u, SolveStatus::Infeasible, iterations);
            }
            if t2.is_infinite() {
                for (uj, rj) in u.iter_mut().zip(r.iter()) {
                    *uj -= t1 * rj;
                }
                up += t1;
                let l = drop.expect("finite partial step has a blocking constraint");
                remove_active(&mut j_mat, &mut r_mat, &mut active, &mut u, l);
                continue;
            }

            let t = t1.min(t2);
            x += &z * t;
            for (uj, rj) in u.iter_mut().zip(r.iter()) {
                *uj -= t * rj;
            }
            up += t;
            if t2 <= t1 {
                add_active(&mut j_mat, &mut r_mat, dvec, q);
                active.push(p);
                u.push(up);
                continue 'outer;
            }
            let l = drop.expect("partial step has a blocking constraint");
            remove_active(&mut j_mat, &mut r_mat, &mut active, &mut u, l);
        }
    }
}

fn back_substitute(r: &Matrix, d: &Vector, q: usize) -> Vector {
    let mut out = Vector::zeros(q);
    for i in (0..q).rev() {
        let mut acc = d[i];
        for jj in i + 1..q {
            acc -= r[(i, jj)] * out[jj];
        }
        out[i] = acc / r[(i, i)];
    }
    out
}

fn rotate_columns(j_mat: &mut Matrix, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..j_mat.nrows() {
        let ja = j_mat[(row, a)];
        let jb = j_mat[(row, b)];
        j_mat[(row, a)] = c * ja + s * jb;
        j_mat[(row, b)] = -s * ja + c * jb;
    }
}

fn add_active(j_mat: &mut Matrix, r_mat: &mut Matrix, mut d: Vector, q: usize) {
    let n = d.len();
    for jj in (q + 1..n).rev() {
        let (a, b) = (d[jj - 1], d[jj]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (c, s) = (a / h, b / h);
        d[jj - 1] = h;
        d[jj] = 0.0;
        rotate_columns(j_mat, jj - 1, jj, c, s);
    }
    for i in 0..=q {
        r_mat[(i, q)] = d[i];
    }
}

fn remove_active(
    j_mat: &mut Matrix,
    r_mat: &mut Matrix,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    l: usize,
) {
    let q = active.len();
    for col in l..q - 1 {
        for row in 0..q {
            r_mat[(row, col)] = r_mat[(row, col + 1)];
        }
    }
    for row in 0..q {
        r_mat[(row, q - 1)] = 0.0;
    }
    // Restore triangularity: R is now upper Hessenberg from column l on.
    for i in l..q - 1 {
        let (a, b) = (r_mat[(i, i)], r_mat[(i + 1, i)]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (c, s) = (a / h, b / h);
        for col in i..q - 1 {
            let ra = r_mat[(i, col)];
            let rb = r_mat[(i + 1, col)];
            r_mat[(i, col)] = c * ra + s * rb;
            r_mat[(i + 1, col)] = -s * ra + c * rb;
        }
        rotate_columns(j_mat, i, i + 1, c, s);
    }
    active.remove(l);
    u.remove(l);
}

pub(crate) fn linear_system(cs: &ConstraintSet) -> (Matrix, Vector) {
    let m = cs.linear.len();
    let a = Matrix::from_fn(m, cs.dim, |i, j| cs.linear[i].normal[j]);
    let b = Vector::from_fn(m, |i, _| cs.linear[i].bound);
    (a, b)
}

/// Smallest violation bound `t ≥ 0` such that `a·x ≤ b + t` is feasible.
pub(crate) fn min_max_violation(a: &Matrix, b: &Vector) -> Option<f64> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let n = a.ncols();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let xs: Vec<_> = (0..n)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    for i in 0..a.nrows() {
        let norm = a.row(i).norm().max(1e-300);
        let mut expr: Vec<_> = xs.iter().enumerate().map(|(j, &v)| (v, a[(i, j)] / norm)).collect();
        expr.push((t, -1.0));
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, b[i] / norm);
    }
    let sol = lp.solve().ok()?.into_solution().ok()?;
    Some(sol.var_value(t))
}

/// Minimises `‖x − x0‖²` over the polytope given by the linear constraints
/// of `cs`.
pub fn solve_qp(x0: &Vector, cs: &ConstraintSet, cfg: &SolverConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_dim(cs.dim, x0.len())?;
    if !cs.quadratic.is_empty() {
        return Err(Error::InvalidArgument(
            "solve_qp takes linear constraints only".into(),
        ));
    }
    let (a, b) = linear_system(cs);
    let mut proj = project_polytope(x0, &a, &b, cfg);
    let mut bounds = b.clone();
    if proj.status == SolveStatus::Infeasible {
        // Phase 1: only declare infeasibility beyond the feasibility tolerance.
        match min_max_violation(&a, &b) {
            Some(t) if t <= cfg.feas_tol => {
                bounds.add_scalar_mut(cfg.feas_tol);
                proj = project_polytope(x0, &a, &bounds, cfg);
            }
            _ => return Ok(SolveOutcome::infeasible(x0, proj.iterations)),
        }
        if proj.status == SolveStatus::Infeasible {
            return Ok(SolveOutcome::infeasible(x0, proj.iterations));
        }
    }
    let kkt = proj.kkt_residual(x0, &a, &bounds);
    Ok(SolveOutcome {
        objective: (&proj.point - x0).norm_squared(),
        point: proj.point,
        status: proj.status,
        kkt_residual: kkt,
        iterations: proj.iterations,
    })
}
