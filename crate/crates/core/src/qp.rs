//! Dense strictly convex QP solver and the control-QP assembly.
//!
//! `solve` implements the Goldfarb–Idnani dual active-set method. Rows with
//! `lb == ub` are treated as equalities; infinite bounds are ignored.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Tikhonov term added to the control-QP Hessian.
pub const REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("lower bound above upper bound in row {0}")]
    InvalidBounds(usize),
    #[error("constraints are infeasible (row {0})")]
    Infeasible(usize),
    #[error("iteration limit {0} reached")]
    MaxIterations(usize),
}

/// `min ½xᵀHx + gᵀx  s.t.  lb ≤ Ax ≤ ub`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self { h, g, a: DMatrix::zeros(0, n), lb: DVector::zeros(0), ub: DVector::zeros(0) }
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.g.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::DimensionMismatch(format!("H is {}×{}, g has {n} entries", self.h.nrows(), self.h.ncols())));
        }
        let k = self.a.nrows();
        if self.a.ncols() != n || self.lb.len() != k || self.ub.len() != k {
            return Err(QpError::DimensionMismatch(format!("A is {}×{}, lb {}, ub {}, expected {n} columns", k, self.a.ncols(), self.lb.len(), self.ub.len())));
        }
        for i in 0..k {
            if self.lb[i] > self.ub[i] || self.lb[i].is_nan() || self.ub[i].is_nan() {
                return Err(QpError::InvalidBounds(i));
            }
        }
        Ok(())
    }

    /// Max of stationarity, primal violation, dual-sign violation and
    /// complementarity for a primal/dual pair.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        let stationarity = (&self.h * x + &self.g - self.a.transpose() * lambda).amax();
        let mut worst = stationarity;
        for i in 0..self.num_rows() {
            let lo = self.lb[i] - ax[i];
            let hi = ax[i] - self.ub[i];
            worst = worst.max(lo.max(hi).max(0.0));
            let l = lambda[i];
            if l > 0.0 {
                worst = worst.max((l * (ax[i] - self.lb[i])).abs());
                if !self.lb[i].is_finite() {
                    worst = worst.max(l);
                }
            } else if l < 0.0 {
                worst = worst.max((l * (self.ub[i] - ax[i])).abs());
                if !self.ub[i].is_finite() {
                    worst = worst.max(-l);
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    Lower,
    Upper,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveConstraint {
    pub row: usize,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Row multipliers: positive at a lower bound, negative at an upper bound.
    pub lambda: DVector<f64>,
    pub active: Vec<ActiveConstraint>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
}

/// Solver with warm-start memory of the previous active set.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    warm: Vec<ActiveConstraint>,
    pub max_iterations: Option<usize>,
}

pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    QpSolver::default().solve(p)
}

struct Work {
    // Transformed constraint normals, one column per row of A (unit-scaled).
    normals: DMatrix<f64>,
    scale: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl Work {
    fn signed_normal(&self, c: ActiveConstraint) -> (DVector<f64>, f64) {
        let n = self.normals.column(c.row).into_owned();
        match c.bound {
            Bound::Lower | Bound::Equal => (n, self.lb[c.row]),
            Bound::Upper => (-n, -self.ub[c.row]),
        }
    }
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.warm.clear();
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        p.validate()?;
        let n = p.num_vars();
        let k = p.num_rows();
        let chol = p.h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let l = chol.l();

        // Work in y = Lᵀx, where the Hessian becomes the identity.
        let mut scale = vec![1.0; k];
        let mut at = p.a.transpose();
        for i in 0..k {
            let s = at.column(i).norm();
            if s > 0.0 {
                scale[i] = s;
                at.column_mut(i).unscale_mut(s);
            }
        }
        let normals = l.solve_lower_triangular(&at).unwrap_or(at);
        let g_t = l.solve_lower_triangular(&p.g).unwrap_or_else(|| p.g.clone());
        let work = Work { normals, lb: (0..k).map(|i| p.lb[i] / scale[i]).collect(), ub: (0..k).map(|i| p.ub[i] / scale[i]).collect(), scale };

        let mut y = -g_t;
        let mut active: Vec<ActiveConstraint> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let max_iter = self.max_iterations.unwrap_or(10 * (n + k) + 100);
        let mut iterations = 0;

        let tol = |b: f64| 1e-11 * (1.0 + b.abs());
        let is_active = |active: &[ActiveConstraint], row: usize| active.iter().any(|c| c.row == row);

        loop {
            // Step 1: choose a violated constraint.
            let mut chosen: Option<(ActiveConstraint, f64)> = None;
            for i in 0..k {
                if work.lb[i] == work.ub[i] && work.lb[i].is_finite() && !is_active(&active, i) {
                    let s = work.normals.column(i).dot(&y) - work.lb[i];
                    if s.abs() > tol(work.lb[i]) || !dependent(&work, &active, i) {
                        chosen = Some((ActiveConstraint { row: i, bound: Bound::Equal }, s));
                        break;
                    }
                }
            }
            if chosen.is_none() {
                for c in &self.warm {
                    if c.row < k && c.bound != Bound::Equal && !is_active(&active, c.row) {
                        let (nv, b) = work.signed_normal(*c);
                        let s = nv.dot(&y) - b;
                        if s < -tol(b) {
                            chosen = Some((*c, s));
                            break;
                        }
                    }
                }
            }
            if chosen.is_none() {
                let mut worst = 0.0;
                for i in 0..k {
                    if is_active(&active, i) || work.lb[i] == work.ub[i] {
                        continue;
                    }
                    let ny = work.normals.column(i).dot(&y);
                    if work.lb[i].is_finite() {
                        let s = ny - work.lb[i];
                        if s < -tol(work.lb[i]) && s < worst {
                            worst = s;
                            chosen = Some((ActiveConstraint { row: i, bound: Bound::Lower }, s));
                        }
                    }
                    if work.ub[i].is_finite() {
                        let s = work.ub[i] - ny;
                        if s < -tol(work.ub[i]) && s < worst {
                            worst = s;
                            chosen = Some((ActiveConstraint { row: i, bound: Bound::Upper }, s));
                        }
                    }
                }
            }
            let Some((p_c, _)) = chosen else { break };

            let (mut np, mut bp) = work.signed_normal(p_c);
            let mut flip = 1.0;
            if p_c.bound == Bound::Equal && np.dot(&y) - bp > 0.0 {
                np = -np;
                bp = -bp;
                flip = -1.0;
            }
            let mut u_p = 0.0;

            // Step 2: move until p becomes active, dropping blocking constraints.
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(QpError::MaxIterations(max_iter));
                }
                let (z, r) = step_direction(&work, &active, &np, n);
                let s_p = np.dot(&y) - bp;

                let mut t1 = f64::INFINITY;
                let mut drop_idx = None;
                for (j, c) in active.iter().enumerate() {
                    if c.bound != Bound::Equal && r[j] > 1e-14 {
                        let t = u[j] / r[j];
                        if t < t1 {
                            t1 = t;
                            drop_idx = Some(j);
                        }
                    }
                }
                let zz = z.dot(&np);
                let t2 = if z.norm() > 1e-12 * (1.0 + np.norm()) && zz > 0.0 { (-s_p / zz).max(0.0) } else { f64::INFINITY };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(QpError::Infeasible(p_c.row));
                }
                for j in 0..active.len() {
                    u[j] -= t * r[j];
                }
                u_p += t;
                if t2.is_finite() {
                    y += &z * t;
                }
                if t2 <= t1 {
                    let bound = p_c.bound;
                    active.push(ActiveConstraint { row: p_c.row, bound });
                    // Equalities flipped to the other side keep a signed multiplier.
                    u.push(if bound == Bound::Equal { u_p * flip } else { u_p });
                    break;
                }
                let j = drop_idx.expect("partial step requires a blocking constraint");
                active.remove(j);
                u.remove(j);
            }
        }

        let x = l.transpose().solve_upper_triangular(&y).unwrap_or_else(|| y.clone());
        let mut lambda = DVector::zeros(k);
        for (c, &uj) in active.iter().zip(&u) {
            let sign = if c.bound == Bound::Upper { -1.0 } else { 1.0 };
            lambda[c.row] = sign * uj / work.scale[c.row];
        }
        self.warm = active.clone();
        let kkt_residual = p.kkt_residual(&x, &lambda);
        let objective = p.objective(&x);
        Ok(QpSolution { x, lambda, active, kkt_residual, iterations, objective })
    }
}

fn active_matrix(work: &Work, active: &[ActiveConstraint], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, active.len());
    for (j, c) in active.iter().enumerate() {
        let col = work.normals.column(c.row);
        let sign = if c.bound == Bound::Upper { -1.0 } else { 1.0 };
        m.column_mut(j).copy_from(&(col * sign));
    }
    m
}

/// Primal step `z = (I − QQᵀ)n` and dual step `r = R⁻¹Qᵀn` for the current
/// active normals `N = QR`.
fn step_direction(work: &Work, active: &[ActiveConstraint], np: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    if active.is_empty() {
        return (np.clone(), DVector::zeros(0));
    }
    let qr = active_matrix(work, active, n).qr();
    let q = qr.q();
    let r_mat = qr.r();
    let qtn = q.transpose() * np;
    let z = np - &q * &qtn;
    let r = r_mat.solve_upper_triangular(&qtn).unwrap_or_else(|| DVector::zeros(active.len()));
    (z, r)
}

fn dependent(work: &Work, active: &[ActiveConstraint], row: usize) -> bool {
    let n = work.normals.nrows();
    let np = work.normals.column(row).into_owned();
    let (z, _) = step_direction(work, active, &np, n);
    z.norm() <= 1e-10
}

/// Slow reference solver: accelerated projected gradient ascent on the dual
/// `max_{λ≥0} −½(Cᵀλ − g)ᵀH⁻¹(Cᵀλ − g) + dᵀλ` of `Cx ≥ d`.
///
/// Returns the primal point recovered from the final multipliers and the dual
/// objective, which lower-bounds the optimal value.
pub fn dual_projected_gradient(p: &QpProblem, max_iter: usize, tol: f64) -> Result<(DVector<f64>, f64), QpError> {
    p.validate()?;
    let chol = p.h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let mut rows = Vec::new();
    let mut d = Vec::new();
    for i in 0..p.num_rows() {
        if p.lb[i].is_finite() {
            rows.push(p.a.row(i).into_owned());
            d.push(p.lb[i]);
        }
        if p.ub[i].is_finite() {
            rows.push(-p.a.row(i).into_owned());
            d.push(-p.ub[i]);
        }
    }
    let n = p.num_vars();
    let m = rows.len();
    let mut c = DMatrix::zeros(m, n);
    for (i, r) in rows.iter().enumerate() {
        c.row_mut(i).copy_from(r);
    }
    let d = DVector::from_vec(d);
    let hinv_ct = chol.solve(&c.transpose());
    let hinv_g = chol.solve(&p.g);
    let q = &c * &hinv_ct;
    let lipschitz = q.symmetric_eigenvalues().amax().max(1e-12);
    let step = 1.0 / lipschitz;
    // ∇D(λ) = d − C x(λ),  x(λ) = H⁻¹Cᵀλ − H⁻¹g.
    let c_hinv_g = &c * &hinv_g;
    let dual = |lam: &DVector<f64>| {
        let w = c.transpose() * lam - &p.g;
        -0.5 * w.dot(&chol.solve(&w)) + d.dot(lam)
    };
    let mut lam = DVector::zeros(m);
    let mut mom = lam.clone();
    let mut t = 1.0f64;
    let mut best = dual(&lam);
    for _ in 0..max_iter {
        let grad = &d - (&q * &mom - &c_hinv_g);
        let next = (&mom + grad * step).map(|v: f64| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let value = dual(&next);
        if value < best {
            // Adaptive restart.
            mom = lam.clone();
            t = 1.0;
            continue;
        }
        let delta = &next - &lam;
        mom = &next + &delta * ((t - 1.0) / t_next);
        t = t_next;
        lam = next;
        let improvement = value - best;
        best = value;
        if delta.amax() < tol && improvement.abs() < tol * tol {
            break;
        }
    }
    let x = &hinv_ct * &lam - hinv_g;
    Ok((x, best))
}

/// Least-squares task `w·‖Jx − b‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTask {
    pub map: DMatrix<f64>,
    pub target: DVector<f64>,
    pub weight: f64,
}

/// Position, velocity and torque limits of one arm whose accelerations occupy
/// variables `offset..offset + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmLimits {
    pub offset: usize,
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    pub dq_max: DVector<f64>,
    pub tau_max: DVector<f64>,
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub dt: f64,
}

impl ArmLimits {
    pub fn dof(&self) -> usize {
        self.q.len()
    }

    fn check(&self, n_var: usize) -> Result<(), QpError> {
        let n = self.dof();
        let vecs = [&self.dq, &self.q_min, &self.q_max, &self.dq_max, &self.tau_max, &self.bias];
        if vecs.iter().any(|v| v.len() != n) || self.mass.nrows() != n || self.mass.ncols() != n {
            return Err(QpError::DimensionMismatch(format!("arm limits at offset {} are inconsistent", self.offset)));
        }
        if self.offset + n > n_var {
            return Err(QpError::DimensionMismatch(format!("arm at offset {} exceeds {n_var} variables", self.offset)));
        }
        Ok(())
    }
}

/// Stacks weighted tasks and per-arm limits into a QP over `n_var` joint
/// accelerations.
pub fn build_control_qp(tasks: &[LinearTask], limits: &[ArmLimits], n_var: usize, regularization: f64) -> Result<QpProblem, QpError> {
    let mut h = DMatrix::identity(n_var, n_var) * regularization;
    let mut g = DVector::zeros(n_var);
    for (i, t) in tasks.iter().enumerate() {
        if t.map.ncols() != n_var || t.map.nrows() != t.target.len() {
            return Err(QpError::DimensionMismatch(format!(
                "task {i}: map {}×{}, target {}, expected {n_var} columns",
                t.map.nrows(),
                t.map.ncols(),
                t.target.len()
            )));
        }
        let jt = t.map.transpose();
        h += &jt * &t.map * t.weight;
        g -= &jt * &t.target * t.weight;
    }
    // Exact symmetry regardless of summation order.
    let h = (&h + h.transpose()) * 0.5;

    let rows: usize = limits.iter().map(|l| 3 * l.dof()).sum();
    let mut a = DMatrix::zeros(rows, n_var);
    let mut lb = DVector::zeros(rows);
    let mut ub = DVector::zeros(rows);
    let mut r = 0;
    for lim in limits {
        lim.check(n_var)?;
        let n = lim.dof();
        let dt = lim.dt;
        for j in 0..n {
            let c = lim.offset + j;
            a[(r + j, c)] = 0.5 * dt * dt;
            let drift = lim.q[j] + lim.dq[j] * dt;
            lb[r + j] = lim.q_min[j] - drift;
            ub[r + j] = lim.q_max[j] - drift;

            a[(r + n + j, c)] = dt;
            lb[r + n + j] = -lim.dq_max[j] - lim.dq[j];
            ub[r + n + j] = lim.dq_max[j] - lim.dq[j];

            for k in 0..n {
                a[(r + 2 * n + j, lim.offset + k)] = lim.mass[(j, k)];
            }
            lb[r + 2 * n + j] = -lim.tau_max[j] - lim.bias[j];
            ub[r + 2 * n + j] = lim.tau_max[j] - lim.bias[j];
        }
        // A state already outside a limit yields lb > ub only through
        // rounding; widen to the tighter side.
        for i in r..r + 3 * n {
            if lb[i] > ub[i] {
                let m = 0.5 * (lb[i] + ub[i]);
                lb[i] = m;
                ub[i] = m;
            }
        }
        r += 3 * n;
    }
    Ok(QpProblem { h, g, a, lb, ub })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> QpProblem {
        let b = random_matrix(rng, n, n);
        let h = b.transpose() * &b + DMatrix::identity(n, n) * 0.5;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let a = random_matrix(rng, k, n);
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let ax0 = &a * &x0;
        let lb = DVector::from_fn(k, |i, _| ax0[i] - rng.random_range(0.01..1.0));
        let ub = DVector::from_fn(k, |i, _| ax0[i] + rng.random_range(0.01..1.0));
        QpProblem { h, g, a, lb, ub }
    }

    #[test]
    fn unconstrained_minimum() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let p = QpProblem::unconstrained(DMatrix::identity(3, 3), -c.clone());
        let s = solve(&p).unwrap();
        assert_relative_eq!(s.x, c, epsilon = 1e-14);
        assert!(s.active.is_empty());
    }

    #[test]
    fn clipped_scalar() {
        let p = QpProblem {
            h: DMatrix::identity(1, 1),
            g: DVector::from_element(1, -2.0),
            a: DMatrix::identity(1, 1),
            lb: DVector::from_element(1, -1.0),
            ub: DVector::from_element(1, 1.0),
        };
        let s = solve(&p).unwrap();
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.lambda[0], -1.0, epsilon = 1e-12);
        assert_eq!(s.active, vec![ActiveConstraint { row: 0, bound: Bound::Upper }]);
    }

    #[test]
    fn equality_rows() {
        let p = QpProblem {
            h: DMatrix::identity(2, 2),
            g: DVector::zeros(2),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            lb: DVector::from_element(1, 1.0),
            ub: DVector::from_element(1, 1.0),
        };
        let s = solve(&p).unwrap();
        assert_relative_eq!(s.x[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.x[1], 0.5, epsilon = 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let p = QpProblem {
            h: DMatrix::identity(1, 1),
            g: DVector::zeros(1),
            a: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            lb: DVector::from_vec(vec![1.0, -5.0]),
            ub: DVector::from_vec(vec![2.0, 0.0]),
        };
        assert!(matches!(solve(&p), Err(QpError::Infeasible(_))));
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(solve(&p), Err(QpError::DimensionMismatch(_))));
        p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.h[(0, 0)] = -1.0;
        assert_eq!(solve(&p), Err(QpError::NotPositiveDefinite));
        let bad = QpProblem {
            h: DMatrix::identity(1, 1),
            g: DVector::zeros(1),
            a: DMatrix::identity(1, 1),
            lb: DVector::from_element(1, 1.0),
            ub: DVector::from_element(1, 0.0),
        };
        assert_eq!(solve(&bad), Err(QpError::InvalidBounds(0)));
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = random_instance(&mut rng, 14, 42);
            let s = solve(&p).unwrap();
            assert!(s.kkt_residual < 1e-6, "kkt {}", s.kkt_residual);
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_instance(&mut rng, 14, 42);
        let cold = solve(&p).unwrap();
        let mut solver = QpSolver::new();
        solver.solve(&p).unwrap();
        let warm = solver.solve(&p).unwrap();
        assert!((cold.x - &warm.x).amax() < 1e-9);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn agrees_with_dual_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let p = random_instance(&mut rng, 14, 42);
            let s = solve(&p).unwrap();
            let (_, lower) = dual_projected_gradient(&p, 200_000, 1e-12).unwrap();
            let gap = s.objective - lower;
            assert!(gap > -1e-7 && gap < 1e-6, "gap {gap}");
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_instance(&mut rng, 14, 42);
        assert_eq!(solve(&p).unwrap().x, solve(&p).unwrap().x);
    }

    #[test]
    fn single_task_solved_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = random_matrix(&mut rng, 4, 4);
        let b = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let task = LinearTask { map: j.clone(), target: b.clone(), weight: 1.0 };
        let p = build_control_qp(&[task], &[], 4, REGULARIZATION).unwrap();
        let s = solve(&p).unwrap();
        assert!((&j * &s.x - b).amax() < 1e-6);
    }

    #[test]
    fn conflicting_tasks_match_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let j1 = random_matrix(&mut rng, 3, 3);
        let j2 = random_matrix(&mut rng, 3, 3);
        let b1 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let b2 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let tasks = [LinearTask { map: j1.clone(), target: b1.clone(), weight: 1.0 }, LinearTask { map: j2.clone(), target: b2.clone(), weight: 1.0 }];
        let p = build_control_qp(&tasks, &[], 3, 0.0).unwrap();
        let s = solve(&p).unwrap();
        let normal = j1.transpose() * &j1 + j2.transpose() * &j2;
        let rhs = j1.transpose() * b1 + j2.transpose() * b2;
        let expected = normal.lu().solve(&rhs).unwrap();
        assert!((s.x - expected).amax() < 1e-10);
    }

    fn single_arm_limits(mass: DMatrix<f64>, bias: DVector<f64>, tau_max: f64) -> ArmLimits {
        let n = bias.len();
        ArmLimits {
            offset: 0,
            q: DVector::zeros(n),
            dq: DVector::zeros(n),
            q_min: DVector::from_element(n, -3.0),
            q_max: DVector::from_element(n, 3.0),
            dq_max: DVector::from_element(n, 2.0),
            tau_max: DVector::from_element(n, tau_max),
            mass,
            bias,
            dt: 1e-3,
        }
    }

    #[test]
    fn torque_limit_is_attained() {
        let mass = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let bias = DVector::from_vec(vec![1.0, -0.5]);
        let lim = single_arm_limits(mass.clone(), bias.clone(), 5.0);
        let task = LinearTask { map: DMatrix::identity(2, 2), target: DVector::from_vec(vec![100.0, 0.0]), weight: 1.0 };
        let p = build_control_qp(&[task], &[lim], 2, REGULARIZATION).unwrap();
        let s = solve(&p).unwrap();
        let tau = &mass * &s.x + &bias;
        assert!((tau[0] - 5.0).abs() < 1e-6, "tau {tau}");
        assert!(tau[1].abs() <= 5.0 + 1e-8);
        assert!(s.kkt_residual < 1e-6);
    }

    #[test]
    fn control_qp_layout() {
        let mass = DMatrix::identity(2, 2);
        let bias = DVector::zeros(2);
        let mut lim = single_arm_limits(mass, bias, 10.0);
        lim.q = DVector::from_vec(vec![0.1, 0.2]);
        lim.dq = DVector::from_vec(vec![0.5, -0.5]);
        let p = build_control_qp(&[], &[lim.clone()], 2, REGULARIZATION).unwrap();
        assert_eq!(p.num_rows(), 6);
        assert_relative_eq!(p.a[(0, 0)], 0.5e-6);
        assert_relative_eq!(p.ub[0], 3.0 - 0.1 - 0.5e-3);
        assert_relative_eq!(p.lb[2], -2.0 - 0.5);
        assert_relative_eq!(p.ub[5], 10.0);
        lim.offset = 1;
        assert!(matches!(build_control_qp(&[], &[lim], 2, REGULARIZATION), Err(QpError::DimensionMismatch(_))));
        let bad = LinearTask { map: DMatrix::zeros(2, 3), target: DVector::zeros(2), weight: 1.0 };
        assert!(matches!(build_control_qp(&[bad], &[], 2, REGULARIZATION), Err(QpError::DimensionMismatch(_))));
    }

    #[test]
    fn no_constraints_reproduces_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let j = random_matrix(&mut rng, 6, 5);
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let p = build_control_qp(&[LinearTask { map: j.clone(), target: b.clone(), weight: 2.0 }], &[], 5, 0.0).unwrap();
        let s = solve(&p).unwrap();
        let expected = (j.transpose() * &j).cholesky().unwrap().solve(&(j.transpose() * b));
        assert!((s.x - expected).amax() < 1e-8);
    }
}
