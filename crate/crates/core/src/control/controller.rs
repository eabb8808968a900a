use nalgebra::{DMatrix, DVector, Matrix6};
use serde::{Deserialize, Serialize};

use super::{
    damping_matrix, diag6, impedance_wrench, interim_posture_accel, interim_wrench, posture_accel, reference_wrench, EeState, Mode, ModeState, Variant,
};
use crate::dynamics::{gravity_torque, task_space_inertia, ChainModel, DynamicsSnapshot, RobotState};
use crate::liegroup::{LieError, Rotation, Twist6, Vec3, Wrench6};
use crate::qp::{build_control_qp, ArmLimits, LinearTask, QpSolver, REGULARIZATION};
use crate::reference::{ExtendedReference, RsParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub params: RsParams,
    pub variant: Variant,
    /// Joint driven by the posture task (the selection row `S`).
    pub posture_joint: usize,
    pub gravity: Vec3,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { params: RsParams::default(), variant: Variant::Proposed, posture_joint: 0, gravity: Vec3::new(0.0, 0.0, -9.81) }
    }
}

/// Measured state of one arm with its dynamics evaluated at that state.
#[derive(Debug, Clone, Copy)]
pub struct ArmInput<'a> {
    pub model: &'a ChainModel,
    pub state: &'a RobotState,
    pub snap: &'a DynamicsSnapshot,
}

impl ArmInput<'_> {
    pub fn ee(&self) -> EeState {
        EeState { p: self.snap.kin.p, r: self.snap.kin.r, v: self.snap.kin.v }
    }
}

/// Operator reference during a demonstration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingTarget {
    pub p_d: Vec3,
    pub r_d: Rotation,
    pub v_d: Twist6,
    pub xi_d: f64,
    pub dxi_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDiagnostics {
    /// Desired wrench of the impedance task.
    pub wrench: Wrench6,
    /// Posture acceleration target.
    pub beta: f64,
    /// ‖J q̈* + J̇q̇ − Λ⁻¹f‖ at the solution.
    pub impedance_error: f64,
    pub posture_error: f64,
    /// Smallest eigenvalue of the damping matrix.
    pub damping_min_eig: f64,
    pub damped_inertia: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub tau: Vec<DVector<f64>>,
    pub ddq: DVector<f64>,
    pub arms: Vec<ArmDiagnostics>,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    /// Set when the QP failed and gravity compensation was commanded.
    pub fallback: Option<String>,
}

struct ArmTask {
    wrench: Wrench6,
    beta: f64,
    lambda_inv: Matrix6<f64>,
    damping_min_eig: f64,
    damped: bool,
}

fn stiffness_for(mode: Mode, p: &RsParams) -> (Matrix6<f64>, f64) {
    match mode {
        Mode::Recording => (diag6(&p.k_r), p.k_pos_r),
        Mode::Ante => (diag6(&p.k_ante), p.k_pos_ante),
        Mode::Interim => (diag6(&p.k_int), p.k_pos_int),
        Mode::Post => (diag6(&p.k_post), p.k_pos_post),
    }
}

fn gravity_fallback(arms: &[ArmInput<'_>], cfg: &ControllerConfig, reason: String) -> ControlOutput {
    let tau: Vec<DVector<f64>> = arms.iter().map(|a| gravity_torque(a.model, &a.state.q, &cfg.gravity)).collect();
    let n: usize = arms.iter().map(|a| a.model.dof()).sum();
    ControlOutput { tau, ddq: DVector::zeros(n), arms: Vec::new(), qp_iterations: 0, kkt_residual: f64::NAN, fallback: Some(reason) }
}

/// Builds the stacked impedance + posture QP, solves it and maps the
/// accelerations to torques `τ = M q̈* + h`.
fn solve_tasks(arms: &[ArmInput<'_>], tasks: &[ArmTask], cfg: &ControllerConfig, solver: &mut QpSolver) -> ControlOutput {
    let n_var: usize = arms.iter().map(|a| a.model.dof()).sum();
    let mut lin = Vec::with_capacity(2 * arms.len());
    let mut limits = Vec::with_capacity(arms.len());
    let mut offset = 0;
    for (arm, task) in arms.iter().zip(tasks) {
        let n = arm.model.dof();
        let kin = &arm.snap.kin;
        let mut map = DMatrix::zeros(6, n_var);
        map.view_mut((0, offset), (6, n)).copy_from(&kin.j);
        let target = task.lambda_inv * task.wrench - kin.dj_dq;
        lin.push(LinearTask { map, target: DVector::from_column_slice(target.as_slice()), weight: cfg.params.w_imp });
        let mut sel = DMatrix::zeros(1, n_var);
        sel[(0, offset + cfg.posture_joint)] = 1.0;
        lin.push(LinearTask { map: sel, target: DVector::from_element(1, task.beta), weight: cfg.params.w_pos });
        limits.push(ArmLimits {
            offset,
            q: arm.state.q.clone(),
            dq: arm.state.dq.clone(),
            q_min: arm.model.q_min(),
            q_max: arm.model.q_max(),
            dq_max: arm.model.dq_max(),
            tau_max: arm.model.tau_max(),
            mass: arm.snap.mass.clone(),
            bias: arm.snap.bias.clone(),
            dt: cfg.params.dt,
        });
        offset += n;
    }
    let problem = match build_control_qp(&lin, &limits, n_var, REGULARIZATION) {
        Ok(p) => p,
        Err(e) => return gravity_fallback(arms, cfg, e.to_string()),
    };
    let sol = match solver.solve(&problem) {
        Ok(s) => s,
        Err(e) => {
            solver.reset();
            return gravity_fallback(arms, cfg, e.to_string());
        }
    };
    let mut tau = Vec::with_capacity(arms.len());
    let mut diags = Vec::with_capacity(arms.len());
    let mut offset = 0;
    for ((arm, task), lim) in arms.iter().zip(tasks).zip(&limits) {
        let n = arm.model.dof();
        let ddq = sol.x.rows(offset, n).into_owned();
        let raw = &arm.snap.mass * &ddq + &arm.snap.bias;
        tau.push(raw.zip_map(&lim.tau_max, |t, m| t.clamp(-m, m)));
        let kin = &arm.snap.kin;
        let accel = &kin.j * &ddq + kin.dj_dq;
        diags.push(ArmDiagnostics {
            wrench: task.wrench,
            beta: task.beta,
            impedance_error: (accel - task.lambda_inv * task.wrench).norm(),
            posture_error: (ddq[cfg.posture_joint] - task.beta).abs(),
            damping_min_eig: task.damping_min_eig,
            damped_inertia: task.damped,
        });
        offset += n;
    }
    ControlOutput { tau, ddq: sol.x, arms: diags, qp_iterations: sol.iterations, kkt_residual: sol.kkt_residual, fallback: None }
}

fn arm_task(
    arm: &ArmInput<'_>,
    k: &Matrix6<f64>,
    wrench: impl FnOnce(&EeState, &Matrix6<f64>) -> Result<Wrench6, LieError>,
    beta: f64,
) -> Result<ArmTask, String> {
    let inertia = task_space_inertia(&arm.snap.kin.j, &arm.snap.mass).map_err(|e| e.to_string())?;
    let d = damping_matrix(&inertia.lambda, k).map_err(|e| e.to_string())?;
    let wrench = wrench(&arm.ee(), &d).map_err(|e| e.to_string())?;
    Ok(ArmTask { wrench, beta, lambda_inv: inertia.lambda_inv, damping_min_eig: d.symmetric_eigenvalues().min(), damped: inertia.damped })
}

/// One autonomous control step in the mode given by `mode`.
pub fn control_step(
    arms: &[ArmInput<'_>],
    mode: &ModeState,
    cfg: &ControllerConfig,
    reference: &ExtendedReference,
    t: f64,
    solver: &mut QpSolver,
) -> ControlOutput {
    let (k, k_pos) = stiffness_for(mode.mode, &cfg.params);
    let j = cfg.posture_joint;
    let mut tasks = Vec::with_capacity(arms.len());
    for (i, arm) in arms.iter().enumerate() {
        let xi = arm.state.q[j];
        let dxi = arm.state.dq[j];
        let task = match mode.mode {
            Mode::Ante | Mode::Recording => {
                let r = reference.ante(i, t);
                arm_task(arm, &k, |ee, d| reference_wrench(&r, ee, &k, d), posture_accel(r.xi, r.dxi, r.beta, xi, dxi, k_pos))
            }
            Mode::Post => {
                let r = reference.post(i, t);
                arm_task(arm, &k, |ee, d| reference_wrench(&r, ee, &k, d), posture_accel(r.xi, r.dxi, r.beta, xi, dxi, k_pos))
            }
            Mode::Interim => {
                let a = reference.ante(i, t);
                let p = reference.post(i, t);
                let g = mode.gamma;
                arm_task(arm, &k, |ee, d| interim_wrench(&a, &p, ee, g, &k, d), interim_posture_accel(&a, &p, xi, dxi, g, k_pos))
            }
        };
        match task {
            Ok(t) => tasks.push(t),
            Err(e) => return gravity_fallback(arms, cfg, e),
        }
    }
    solve_tasks(arms, &tasks, cfg, solver)
}

/// One demonstration step under the low recording gains. The returned
/// diagnostics carry the recorded wrench `f_r` and posture target `β_r`.
pub fn recording_step(arms: &[ArmInput<'_>], targets: &[RecordingTarget], cfg: &ControllerConfig, solver: &mut QpSolver) -> ControlOutput {
    let (k, k_pos) = stiffness_for(Mode::Recording, &cfg.params);
    let j = cfg.posture_joint;
    let mut tasks = Vec::with_capacity(arms.len());
    for (arm, tg) in arms.iter().zip(targets) {
        let beta = posture_accel(tg.xi_d, tg.dxi_d, 0.0, arm.state.q[j], arm.state.dq[j], k_pos);
        let task = arm_task(arm, &k, |ee, d| impedance_wrench(&tg.p_d, &tg.r_d, &tg.v_d, &Wrench6::zeros(), ee, &k, d), beta);
        match task {
            Ok(t) => tasks.push(t),
            Err(e) => return gravity_fallback(arms, cfg, e),
        }
    }
    solve_tasks(arms, &tasks, cfg, solver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ee_kinematics, snapshot, test_chains};
    use crate::liegroup::to_quaternion;
    use crate::reference::{extend, ArmSample, Recorder};

    fn rest_q() -> DVector<f64> {
        DVector::from_vec(vec![0.1, 0.4, -0.2, -1.7, 0.1, 1.6, 0.3])
    }

    /// Stationary two-arm reference at the given state.
    fn stationary_reference(model: &ChainModel, q: &DVector<f64>) -> ExtendedReference {
        let kin = ee_kinematics(model, &RobotState::at_rest(q.clone()));
        let mut rec = Recorder::new(1e-3, 0.0, 2, 7);
        for _ in 0..1000 {
            let s = ArmSample {
                p: kin.p,
                quat: to_quaternion(&kin.r),
                twist: Twist6::zeros(),
                xi: q[0],
                dxi: 0.0,
                f_ff: Wrench6::zeros(),
                beta: 0.0,
                q: q.clone(),
                dq: DVector::zeros(7),
                f_est: Vec3::zeros(),
            };
            rec.push(vec![s.clone(), s]);
        }
        extend(&rec.finish(), 0.5, 0.1).unwrap()
    }

    #[test]
    fn at_rest_on_reference_commands_gravity() {
        let model = test_chains::spatial7();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let q = rest_q();
        let state = RobotState::at_rest(q.clone());
        let snap = snapshot(&model, &state, &g);
        let reference = stationary_reference(&model, &q);
        let arms = [ArmInput { model: &model, state: &state, snap: &snap }, ArmInput { model: &model, state: &state, snap: &snap }];
        let cfg = ControllerConfig::default();
        for mode in
            [ModeState::ante(), ModeState { mode: Mode::Interim, t_imp: Some(0.2), gamma: 0.4 }, ModeState { mode: Mode::Post, t_imp: None, gamma: 1.0 }]
        {
            let out = control_step(&arms, &mode, &cfg, &reference, 0.3, &mut QpSolver::new());
            assert!(out.fallback.is_none());
            let grav = gravity_torque(&model, &q, &g);
            for tau in &out.tau {
                assert!((tau - &grav).amax() < 1e-6, "mode {:?}: {}", mode.mode, (tau - &grav).amax());
            }
        }
    }

    #[test]
    fn torque_limit_clips_exactly() {
        let model = test_chains::spatial7();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let q = rest_q();
        let state = RobotState::at_rest(q.clone());
        let snap = snapshot(&model, &state, &g);
        // A reference 0.5 m away demands far more torque than allowed.
        let mut far = q.clone();
        far[1] += 0.6;
        far[3] += 0.5;
        let reference = stationary_reference(&model, &far);
        let arms = [ArmInput { model: &model, state: &state, snap: &snap }, ArmInput { model: &model, state: &state, snap: &snap }];
        let out = control_step(&arms, &ModeState::ante(), &ControllerConfig::default(), &reference, 0.3, &mut QpSolver::new());
        assert!(out.fallback.is_none());
        let tau_max = model.tau_max();
        let mut at_limit = 0;
        for tau in &out.tau {
            for i in 0..7 {
                assert!(tau[i].abs() <= tau_max[i]);
                if (tau[i].abs() - tau_max[i]).abs() < 1e-6 {
                    at_limit += 1;
                }
            }
        }
        assert!(at_limit > 0);
        assert!(out.kkt_residual < 1e-6);
    }

    #[test]
    fn recording_spring_scales_with_stiffness() {
        let model = test_chains::spatial7();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let q = rest_q();
        let state = RobotState::at_rest(q.clone());
        let snap = snapshot(&model, &state, &g);
        let kin = &snap.kin;
        let arms = [ArmInput { model: &model, state: &state, snap: &snap }];
        let offset = Vec3::new(0.0, 0.01, -0.005);
        let target = RecordingTarget { p_d: kin.p + offset, r_d: kin.r, v_d: Twist6::zeros(), xi_d: q[0], dxi_d: 0.0 };
        let cfg = ControllerConfig::default();
        let rec = recording_step(&arms, &[target], &cfg, &mut QpSolver::new());
        let low = rec.arms[0].wrench;
        // At rest the damping term vanishes, so only the spring scales.
        let ratio = cfg.params.k_ante[0] / cfg.params.k_r[0];
        let ante = super::super::impedance_wrench(
            &target.p_d,
            &target.r_d,
            &target.v_d,
            &Wrench6::zeros(),
            &arms[0].ee(),
            &diag6(&cfg.params.k_ante),
            &Matrix6::zeros(),
        )
        .unwrap();
        for c in 0..3 {
            assert!((ante[c] - ratio * low[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn failure_falls_back_to_gravity() {
        let model = test_chains::spatial7();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let q = rest_q();
        // Joint velocity far beyond its limit makes the velocity rows infeasible
        // together with the torque rows.
        let mut dq = DVector::zeros(7);
        dq[0] = 50.0;
        let state = RobotState::new(q.clone(), dq);
        let snap = snapshot(&model, &state, &g);
        let reference = stationary_reference(&model, &q);
        let arms = [ArmInput { model: &model, state: &state, snap: &snap }];
        let out = control_step(&arms, &ModeState::ante(), &ControllerConfig::default(), &reference, 0.3, &mut QpSolver::new());
        assert!(out.fallback.is_some());
        assert!((&out.tau[0] - gravity_torque(&model, &q, &g)).amax() < 1e-12);
    }
}
