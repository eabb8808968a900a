//! Rotation-group helpers and small dense matrix utilities.
//!
//! Twists are stacked `[linear; angular]` and wrenches `[force; torque]`. Both
//! are expressed in a frame with the end-effector origin and world-aligned axes.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Twist6 = Vector6<f64>;
pub type Wrench6 = Vector6<f64>;
/// 3×3 rotation matrix. Orthonormality is maintained by construction through
/// [`exp_so3`] and the geodesic helpers below.
pub type Rotation = Matrix3<f64>;

/// Tolerance on `‖W + Wᵀ‖` accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-9;
/// Distance from π below which [`log_so3`] refuses to answer.
pub const PI_MARGIN: f64 = 1e-6;
/// Smallest eigenvalue tolerated by [`sym_sqrt`].
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("matrix is not skew-symmetric (‖W + Wᵀ‖ = {0:e})")]
    NotSkew(f64),
    #[error("rotation angle {0} is too close to π for a unique logarithm")]
    NearPiSingularity(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
}

/// Skew-symmetric matrix such that `hat(w) * u == w.cross(u)`.
pub fn hat(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`].
pub fn vee(w: &Matrix3<f64>) -> Result<Vec3, LieError> {
    let asym = (w + w.transpose()).norm();
    if asym > SKEW_TOL {
        return Err(LieError::NotSkew(asym));
    }
    Ok(Vec3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]))
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vec3) -> Rotation {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor expansions of sin(θ)/θ and (1 − cos θ)/θ².
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `r`. Errors when the angle is within [`PI_MARGIN`] of π.
pub fn log_so3(r: &Rotation) -> Result<Vec3, LieError> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axis_part = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    // atan2 keeps full precision at small angles where acos would not.
    let sin = 0.5 * axis_part.norm();
    let theta = sin.atan2(cos);
    if theta >= std::f64::consts::PI - PI_MARGIN {
        return Err(LieError::NearPiSingularity(theta));
    }
    let scale = if theta < 1e-6 { 0.5 * (1.0 + theta * theta / 6.0) } else { 0.5 * theta / theta.sin() };
    Ok(axis_part * scale)
}

/// Geodesic interpolation `a · exp(s · log(aᵀ b))`.
pub fn geodesic(a: &Rotation, b: &Rotation, s: f64) -> Result<Rotation, LieError> {
    let w = log_so3(&(a.transpose() * b))?;
    Ok(a * exp_so3(&(w * s)))
}

/// Re-orthonormalizes a nearly orthonormal matrix via its polar factor.
pub fn orthonormalize(r: &Rotation) -> Rotation {
    let svd = r.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// `‖RᵀR − I‖` and `|det R − 1|`, the larger of the two.
pub fn rotation_defect(r: &Rotation) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Symmetric square root by eigendecomposition; negative eigenvalues down to
/// `-PSD_TOL` are clamped to zero.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LieError> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(LieError::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Damping matrix `√Λ √K + √K √Λ` for a critically damped impedance.
pub fn critical_damping(inertia: &DMatrix<f64>, stiffness: &DMatrix<f64>) -> Result<DMatrix<f64>, LieError> {
    let sl = sym_sqrt(inertia)?;
    let sk = sym_sqrt(stiffness)?;
    Ok(&sl * &sk + &sk * &sl)
}

/// Rotation about a unit axis.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Rotation {
    exp_so3(&(axis.normalize() * angle))
}

pub fn rot_x(a: f64) -> Rotation {
    axis_angle(&Vec3::x(), a)
}

pub fn rot_y(a: f64) -> Rotation {
    axis_angle(&Vec3::y(), a)
}

pub fn rot_z(a: f64) -> Rotation {
    axis_angle(&Vec3::z(), a)
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix, with `w ≥ 0`.
pub fn to_quaternion(r: &Rotation) -> [f64; 4] {
    let q = nalgebra::UnitQuaternion::from_matrix(r);
    let mut c = [q.w, q.i, q.j, q.k];
    if c[0] < 0.0 {
        c.iter_mut().for_each(|x| *x = -*x);
    }
    c
}

/// Rotation matrix of a `(w, x, y, z)` quaternion. The input is normalized.
pub fn from_quaternion(q: &[f64; 4]) -> Rotation {
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    *uq.to_rotation_matrix().matrix()
}
