//! Impedance and posture laws, the mode supervisor, and the per-step QP
//! controller.

mod controller;
mod supervisor;

pub use controller::{control_step, recording_step, ArmDiagnostics, ArmInput, ControlOutput, ControllerConfig, RecordingTarget};
pub use supervisor::{supervisor_step, Mode, ModeState, Variant};

use nalgebra::{DMatrix, Matrix6, Vector6};

use crate::liegroup::{geodesic, log_so3, sym_sqrt, LieError, Rotation, Twist6, Vec3, Wrench6};
use crate::reference::RefSample;

/// Measured end-effector pose and twist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EeState {
    pub p: Vec3,
    pub r: Rotation,
    pub v: Twist6,
}

/// `[p_d − p; R·vee(log(Rᵀ R_d))]`.
pub fn pose_error(p_d: &Vec3, r_d: &Rotation, ee: &EeState) -> Result<Twist6, LieError> {
    let rot = ee.r * log_so3(&(ee.r.transpose() * r_d))?;
    let dp = p_d - ee.p;
    Ok(Twist6::new(dp.x, dp.y, dp.z, rot.x, rot.y, rot.z))
}

/// `D = √Λ√K + √K√Λ`, projected onto the PSD cone. The product form is
/// indefinite when `Λ` couples axes of very different stiffness.
pub fn damping_matrix(lambda: &Matrix6<f64>, stiffness: &Matrix6<f64>) -> Result<Matrix6<f64>, LieError> {
    let to_6 = |m: DMatrix<f64>| Matrix6::from_fn(|r, c| m[(r, c)]);
    let sl = to_6(sym_sqrt(&DMatrix::from_fn(6, 6, |r, c| lambda[(r, c)]))?);
    let sk = to_6(sym_sqrt(&DMatrix::from_fn(6, 6, |r, c| stiffness[(r, c)]))?);
    let d = sl * sk + sk * sl;
    let d = (d + d.transpose()) * 0.5;
    let eig = d.symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return Ok(d);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let d = eig.eigenvectors * Matrix6::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((d + d.transpose()) * 0.5)
}

/// `f = f_ff + D(v_d − v) + K·[p_d − p; R·vee(log(Rᵀ R_d))]`.
pub fn impedance_wrench(
    p_d: &Vec3,
    r_d: &Rotation,
    v_d: &Twist6,
    f_ff: &Wrench6,
    ee: &EeState,
    k: &Matrix6<f64>,
    d: &Matrix6<f64>,
) -> Result<Wrench6, LieError> {
    Ok(f_ff + d * (v_d - ee.v) + k * pose_error(p_d, r_d, ee)?)
}

/// Wrench of a mode that tracks one extended reference sample.
pub fn reference_wrench(r: &RefSample, ee: &EeState, k: &Matrix6<f64>, d: &Matrix6<f64>) -> Result<Wrench6, LieError> {
    impedance_wrench(&r.p, &r.r, &r.twist, &r.f_ff, ee, k, d)
}

/// `Rⁱⁿᵗ = R̄ᵃ exp(γ log(R̄ᵃᵀ R̄ᵖ))`.
pub fn interim_rotation(r_ante: &Rotation, r_post: &Rotation, gamma: f64) -> Result<Rotation, LieError> {
    geodesic(r_ante, r_post, gamma)
}

/// Blended interim wrench. Velocity feedback acts on `γ(v̄ᵖ − v)`, so it
/// vanishes at `γ = 0`.
pub fn interim_wrench(ante: &RefSample, post: &RefSample, ee: &EeState, gamma: f64, k: &Matrix6<f64>, d: &Matrix6<f64>) -> Result<Wrench6, LieError> {
    let g = gamma.clamp(0.0, 1.0);
    let f_ff = ante.f_ff * (1.0 - g) + post.f_ff * g;
    let v_d = ee.v * (1.0 - g) + post.twist * g;
    let p_d = ante.p * (1.0 - g) + post.p * g;
    let r_d = interim_rotation(&ante.r, &post.r, g)?;
    impedance_wrench(&p_d, &r_d, &v_d, &f_ff, ee, k, d)
}

/// `β = β_ff + 2√k(ξ̇_d − ξ̇) + k(ξ_d − ξ)`.
pub fn posture_accel(xi_d: f64, dxi_d: f64, beta_ff: f64, xi: f64, dxi: f64, k_pos: f64) -> f64 {
    beta_ff + 2.0 * k_pos.sqrt() * (dxi_d - dxi) + k_pos * (xi_d - xi)
}

/// Interim posture target, blended like [`interim_wrench`].
pub fn interim_posture_accel(ante: &RefSample, post: &RefSample, xi: f64, dxi: f64, gamma: f64, k_pos: f64) -> f64 {
    let g = gamma.clamp(0.0, 1.0);
    posture_accel((1.0 - g) * ante.xi + g * post.xi, (1.0 - g) * dxi + g * post.dxi, (1.0 - g) * ante.beta + g * post.beta, xi, dxi, k_pos)
}

pub fn diag6(gains: &[f64; 6]) -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::from_column_slice(gains))
}
