//! Kinematics and rigid-body dynamics of a [`ChainModel`].
//!
//! All recursions run in world coordinates. The mass matrix comes from a
//! composite-rigid-body pass and the bias vector from recursive Newton–Euler,
//! so the two algorithms can be checked against each other.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6xX};

use super::{ChainModel, DynamicsError, Pose, RobotState};
use crate::liegroup::{axis_angle, Rotation, Twist6, Vec3, Wrench6};

/// World-frame quantities of every link for one configuration.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    /// Joint frame origins `oᵢ`.
    pub origin: Vec<Vec3>,
    /// Joint axes `zᵢ`.
    pub axis: Vec<Vec3>,
    pub link_rotation: Vec<Rotation>,
    pub com: Vec<Vec3>,
    /// Inertia about the link centre of mass.
    pub inertia: Vec<Matrix3<f64>>,
    pub ee: Pose,
}

pub fn chain_frames(model: &ChainModel, q: &DVector<f64>) -> ChainFrames {
    let n = model.dof();
    let mut frames = ChainFrames {
        origin: Vec::with_capacity(n),
        axis: Vec::with_capacity(n),
        link_rotation: Vec::with_capacity(n),
        com: Vec::with_capacity(n),
        inertia: Vec::with_capacity(n),
        ee: Pose::identity(),
    };
    let mut link = model.base;
    for (joint, &qi) in model.joints.iter().zip(q.iter()) {
        let jf = link.compose(&joint.origin);
        frames.origin.push(jf.translation);
        frames.axis.push(jf.rotation * joint.axis);
        link = Pose::new(jf.rotation * axis_angle(&joint.axis, qi), jf.translation);
        frames.link_rotation.push(link.rotation);
        frames.com.push(link.transform_point(&joint.com));
        frames.inertia.push(link.rotation * joint.inertia * link.rotation.transpose());
    }
    frames.ee = link.compose(&model.ee);
    frames
}

/// End-effector pose, twist, Jacobian and the `J̇ q̇` product.
#[derive(Debug, Clone)]
pub struct EEKinematics {
    pub p: Vec3,
    pub r: Rotation,
    pub v: Twist6,
    /// Geometric Jacobian mapping `q̇` to `[v; ω]` at the end-effector origin.
    pub j: Matrix6xX<f64>,
    pub dj_dq: Twist6,
}

pub fn ee_kinematics(model: &ChainModel, state: &RobotState) -> EEKinematics {
    let frames = chain_frames(model, &state.q);
    ee_kinematics_from_frames(&frames, &state.dq)
}

pub fn ee_kinematics_from_frames(frames: &ChainFrames, dq: &DVector<f64>) -> EEKinematics {
    let n = frames.origin.len();
    let p = frames.ee.translation;
    let mut j = Matrix6xX::zeros(n);
    for i in 0..n {
        let z = frames.axis[i];
        let lin = z.cross(&(p - frames.origin[i]));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    let v = &j * dq;

    // Acceleration of the end-effector point with q̈ = 0 and no gravity.
    let mut w = Vec3::zeros();
    let mut dw = Vec3::zeros();
    let mut a = Vec3::zeros();
    let mut prev = frames.origin.first().copied().unwrap_or(p);
    for i in 0..n {
        let o = frames.origin[i];
        let r = o - prev;
        a += dw.cross(&r) + w.cross(&w.cross(&r));
        let z = frames.axis[i];
        dw += w.cross(&(z * dq[i]));
        w += z * dq[i];
        prev = o;
    }
    let r = p - prev;
    a += dw.cross(&r) + w.cross(&w.cross(&r));
    let mut dj_dq = Twist6::zeros();
    dj_dq.fixed_rows_mut::<3>(0).copy_from(&a);
    dj_dq.fixed_rows_mut::<3>(3).copy_from(&dw);

    EEKinematics { p, r: frames.ee.rotation, v: Twist6::from_column_slice(v.as_slice()), j, dj_dq }
}

/// Recursive Newton–Euler inverse dynamics `M q̈ + h`.
pub fn inverse_dynamics(model: &ChainModel, q: &DVector<f64>, dq: &DVector<f64>, ddq: &DVector<f64>, gravity: &Vec3) -> DVector<f64> {
    let frames = chain_frames(model, q);
    rnea(model, &frames, dq, ddq, gravity)
}

fn rnea(model: &ChainModel, frames: &ChainFrames, dq: &DVector<f64>, ddq: &DVector<f64>, gravity: &Vec3) -> DVector<f64> {
    let n = model.dof();
    let mut omega = vec![Vec3::zeros(); n];
    let mut alpha = vec![Vec3::zeros(); n];
    let mut acc_com = vec![Vec3::zeros(); n];

    let mut w = Vec3::zeros();
    let mut dw = Vec3::zeros();
    // The base accelerates upward against gravity.
    let mut a_ref = -gravity;
    let mut prev = model.base.translation;
    for i in 0..n {
        let o = frames.origin[i];
        let z = frames.axis[i];
        let r = o - prev;
        let a_o = a_ref + dw.cross(&r) + w.cross(&w.cross(&r));
        dw = dw + z * ddq[i] + w.cross(&(z * dq[i]));
        w += z * dq[i];
        let rc = frames.com[i] - o;
        acc_com[i] = a_o + dw.cross(&rc) + w.cross(&w.cross(&rc));
        omega[i] = w;
        alpha[i] = dw;
        a_ref = a_o;
        prev = o;
    }

    let mut tau = DVector::zeros(n);
    let mut f_next = Vec3::zeros();
    let mut n_next = Vec3::zeros();
    for i in (0..n).rev() {
        let m = model.joints[i].mass;
        let inertia = &frames.inertia[i];
        let o = frames.origin[i];
        let force = acc_com[i] * m;
        let torque = inertia * alpha[i] + omega[i].cross(&(inertia * omega[i]));
        let lever_next = if i + 1 < n { frames.origin[i + 1] - o } else { Vec3::zeros() };
        let n_o = torque + (frames.com[i] - o).cross(&force) + n_next + lever_next.cross(&f_next);
        f_next = force + f_next;
        n_next = n_o;
        tau[i] = frames.axis[i].dot(&n_o) + model.joints[i].armature * ddq[i];
    }
    tau
}

/// Composite-rigid-body mass matrix.
pub fn mass_matrix(model: &ChainModel, q: &DVector<f64>) -> DMatrix<f64> {
    let frames = chain_frames(model, q);
    mass_matrix_from_frames(model, &frames)
}

pub fn mass_matrix_from_frames(model: &ChainModel, frames: &ChainFrames) -> DMatrix<f64> {
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    let mut c_mass = 0.0;
    let mut c_com = Vec3::zeros();
    let mut c_inertia = Matrix3::zeros();
    for i in (0..n).rev() {
        // Merge link i into the composite body of links i..n.
        let mi = model.joints[i].mass;
        let new_mass = c_mass + mi;
        let new_com = (c_com * c_mass + frames.com[i] * mi) / new_mass;
        c_inertia = shift_inertia(&c_inertia, c_mass, &(c_com - new_com)) + shift_inertia(&frames.inertia[i], mi, &(frames.com[i] - new_com));
        c_mass = new_mass;
        c_com = new_com;

        let z = frames.axis[i];
        let o = frames.origin[i];
        let d = c_com - o;
        let force = z.cross(&d) * c_mass;
        let moment = c_inertia * z + d.cross(&force);
        for jj in 0..=i {
            let val = frames.axis[jj].dot(&(moment + (o - frames.origin[jj]).cross(&force)));
            m[(jj, i)] = val;
            m[(i, jj)] = val;
        }
        m[(i, i)] += model.joints[i].armature;
    }
    m
}

/// Parallel-axis theorem: inertia about a point displaced by `-d` from the COM.
fn shift_inertia(inertia: &Matrix3<f64>, mass: f64, d: &Vec3) -> Matrix3<f64> {
    inertia + (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * mass
}

/// Mass matrix assembled column by column from inverse dynamics with unit
/// accelerations, zero velocity and gravity off.
pub fn mass_matrix_rnea(model: &ChainModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let frames = chain_frames(model, q);
    let zero = DVector::zeros(n);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        m.set_column(j, &rnea(model, &frames, &zero, &e, &Vec3::zeros()));
    }
    m
}

/// Gravity, centrifugal and Coriolis vector `h(q, q̇)`.
pub fn bias(model: &ChainModel, q: &DVector<f64>, dq: &DVector<f64>, gravity: &Vec3) -> DVector<f64> {
    inverse_dynamics(model, q, dq, &DVector::zeros(model.dof()), gravity)
}

pub fn gravity_torque(model: &ChainModel, q: &DVector<f64>, gravity: &Vec3) -> DVector<f64> {
    bias(model, q, &DVector::zeros(model.dof()), gravity)
}

/// Everything the controller and the simulator need from one configuration.
#[derive(Debug, Clone)]
pub struct DynamicsSnapshot {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub kin: EEKinematics,
}

pub fn snapshot(model: &ChainModel, state: &RobotState, gravity: &Vec3) -> DynamicsSnapshot {
    let frames = chain_frames(model, &state.q);
    let mass = mass_matrix_from_frames(model, &frames);
    let bias = rnea(model, &frames, &state.dq, &DVector::zeros(model.dof()), gravity);
    let kin = ee_kinematics_from_frames(&frames, &state.dq);
    DynamicsSnapshot { mass, bias, kin }
}

/// Joint accelerations solving `M q̈ + h = τ + Jᵀ f`.
pub fn forward_dynamics(
    model: &ChainModel,
    state: &RobotState,
    tau: &DVector<f64>,
    ext_wrench: &Wrench6,
    gravity: &Vec3,
) -> Result<DVector<f64>, DynamicsError> {
    let snap = snapshot(model, state, gravity);
    forward_dynamics_from(&snap, tau, ext_wrench)
}

pub fn forward_dynamics_from(snap: &DynamicsSnapshot, tau: &DVector<f64>, ext_wrench: &Wrench6) -> Result<DVector<f64>, DynamicsError> {
    let rhs = tau + snap.kin.j.transpose() * ext_wrench - &snap.bias;
    let chol = snap.mass.clone().cholesky().ok_or(DynamicsError::SingularMass)?;
    Ok(chol.solve(&rhs))
}

/// Semi-implicit Euler: velocity first, then position with the new velocity.
pub fn integrate(state: &RobotState, ddq: &DVector<f64>, h: f64) -> RobotState {
    let dq = &state.dq + ddq * h;
    let q = &state.q + &dq * h;
    RobotState { q, dq }
}

/// Kinetic plus gravitational potential energy (J).
pub fn mechanical_energy(model: &ChainModel, state: &RobotState, gravity: &Vec3) -> f64 {
    let frames = chain_frames(model, &state.q);
    let n = model.dof();
    let mut energy = 0.0;
    let mut w = Vec3::zeros();
    for i in 0..n {
        w += frames.axis[i] * state.dq[i];
        let mut v = Vec3::zeros();
        for k in 0..=i {
            v += frames.axis[k].cross(&(frames.com[i] - frames.origin[k])) * state.dq[k];
        }
        let m = model.joints[i].mass;
        energy += 0.5 * m * v.norm_squared() + 0.5 * w.dot(&(frames.inertia[i] * w));
        energy += 0.5 * model.joints[i].armature * state.dq[i] * state.dq[i];
        energy -= m * gravity.dot(&frames.com[i]);
    }
    energy
}

/// Task-space inertia `Λ = (J M⁻¹ Jᵀ)⁻¹` together with its inverse.
#[derive(Debug, Clone)]
pub struct TaskInertia {
    pub lambda: Matrix6<f64>,
    pub lambda_inv: Matrix6<f64>,
    /// Set when the damped inverse had to be used.
    pub damped: bool,
}

/// Smallest singular value of `J M⁻¹ Jᵀ` below which a damped inverse is used.
pub const SINGULAR_THRESHOLD: f64 = 1e-8;
pub const SINGULAR_DAMPING: f64 = 1e-6;

pub fn task_space_inertia(j: &Matrix6xX<f64>, mass: &DMatrix<f64>) -> Result<TaskInertia, DynamicsError> {
    let chol = mass.clone().cholesky().ok_or(DynamicsError::SingularMass)?;
    let minv_jt = chol.solve(&j.transpose());
    let li = j * minv_jt;
    let lambda_inv = Matrix6::from_fn(|r, c| 0.5 * (li[(r, c)] + li[(c, r)]));
    let smallest = lambda_inv.singular_values().min();
    let (target, damped) = if smallest < SINGULAR_THRESHOLD { (lambda_inv + Matrix6::identity() * SINGULAR_DAMPING, true) } else { (lambda_inv, false) };
    let lambda = target.try_inverse().ok_or(DynamicsError::SingularMass)?;
    let lambda = (lambda + lambda.transpose()) * 0.5;
    Ok(TaskInertia { lambda, lambda_inv, damped })
}

/// `(Jᵀ)⁺` applied to a joint-space vector, i.e. the least-squares wrench
/// whose joint-space image is `tau`.
pub fn wrench_from_joint_torque(j: &Matrix6xX<f64>, tau: &DVector<f64>) -> Wrench6 {
    let jjt: Matrix6<f64> = j * j.transpose();
    let rhs: Wrench6 = Wrench6::from_column_slice((j * tau).as_slice());
    let reg = jjt + Matrix6::identity() * 1e-12;
    reg.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(Wrench6::zeros)
}
