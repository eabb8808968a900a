//! Damped least-squares inverse kinematics for home configurations.

use nalgebra::{DMatrix, DVector};

use rspread_core::control::{pose_error, EeState};
use rspread_core::dynamics::{ee_kinematics, ChainModel, RobotState};
use rspread_core::liegroup::{Rotation, Twist6, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Gain of the null-space pull towards the seed.
    pub nullspace_gain: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { damping: 1e-3, tolerance: 1e-10, max_iterations: 500, nullspace_gain: 0.1 }
    }
}

/// Solves for `q` reaching pose `(p, r)`, starting from `seed`. Returns the
/// configuration and the final pose error norm.
pub fn solve_ik(model: &ChainModel, p: &Vec3, r: &Rotation, seed: &DVector<f64>, opts: &IkOptions) -> (DVector<f64>, f64) {
    let n = model.dof();
    let (q_min, q_max) = (model.q_min(), model.q_max());
    let mut q = seed.clone();
    let mut err = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let kin = ee_kinematics(model, &RobotState::at_rest(q.clone()));
        let ee = EeState { p: kin.p, r: kin.r, v: Twist6::zeros() };
        let e = match pose_error(p, r, &ee) {
            Ok(e) => e,
            Err(_) => Twist6::new(p.x - kin.p.x, p.y - kin.p.y, p.z - kin.p.z, 0.0, 0.0, 0.0),
        };
        err = e.norm();
        if err < opts.tolerance {
            break;
        }
        let j = DMatrix::from_fn(6, n, |r, c| kin.j[(r, c)]);
        let jjt = &j * j.transpose() + DMatrix::identity(6, 6) * opts.damping.powi(2);
        let Some(chol) = jjt.cholesky() else { break };
        let e = DVector::from_column_slice(e.as_slice());
        let step = j.transpose() * chol.solve(&e);
        let pinv_j = j.transpose() * chol.solve(&j);
        // Drop the null-space pull near convergence; the damped projector leaks into the task.
        let gain = if err < 1e-4 { 0.0 } else { opts.nullspace_gain };
        let null = (DMatrix::identity(n, n) - pinv_j) * ((seed - &q) * gain);
        q += step + null;
        for i in 0..n {
            q[i] = q[i].clamp(q_min[i], q_max[i]);
        }
    }
    (q, err)
}
