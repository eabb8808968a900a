use nalgebra::{DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::DynamicsError;
use crate::liegroup::{rotation_defect, Rotation, Vec3};

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Rotation::identity(), translation }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// One revolute joint and the link it drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    /// Fixed transform from the parent link frame to the joint frame.
    pub origin: Pose,
    /// Rotation axis in the joint frame (unit).
    pub axis: Vec3,
    /// Link mass (kg).
    pub mass: f64,
    /// Link centre of mass in the link frame (m).
    pub com: Vec3,
    /// Rotational inertia about the centre of mass, link frame (kg·m²).
    pub inertia: Matrix3<f64>,
    pub q_min: f64,
    pub q_max: f64,
    pub dq_max: f64,
    pub tau_max: f64,
    /// Reflected rotor inertia added to the joint's own diagonal (kg·m²).
    #[serde(default)]
    pub armature: f64,
}

/// Serial chain of revolute joints mounted at `base` in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub base: Pose,
    pub joints: Vec<Joint>,
    /// End-effector frame relative to the last link frame.
    pub ee: Pose,
}

impl ChainModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: String| Err(DynamicsError::InvalidModel(msg));
        if self.joints.is_empty() {
            return bad("chain has no joints".into());
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.mass > 0.0) {
                return bad(format!("joint {i}: mass must be positive"));
            }
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("joint {i}: axis is not unit length"));
            }
            if (j.inertia - j.inertia.transpose()).norm() > 1e-12 {
                return bad(format!("joint {i}: inertia is not symmetric"));
            }
            if SymmetricEigen::new(j.inertia).eigenvalues.min() < -1e-12 {
                return bad(format!("joint {i}: inertia is not positive semidefinite"));
            }
            if !(j.armature >= 0.0) {
                return bad(format!("joint {i}: armature must be non-negative"));
            }
            if !(j.q_min < j.q_max) {
                return bad(format!("joint {i}: q_min must be below q_max"));
            }
            if !(j.dq_max > 0.0 && j.tau_max > 0.0) {
                return bad(format!("joint {i}: velocity and torque limits must be positive"));
            }
            if rotation_defect(&j.origin.rotation) > 1e-9 {
                return bad(format!("joint {i}: origin rotation is not orthonormal"));
            }
        }
        Ok(())
    }

    pub fn q_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.q_min))
    }

    pub fn q_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.q_max))
    }

    pub fn dq_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.dq_max))
    }

    pub fn tau_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.tau_max))
    }

    pub fn total_mass(&self) -> f64 {
        self.joints.iter().map(|j| j.mass).sum()
    }
}

/// Joint positions (rad) and velocities (rad/s) of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
}

impl RobotState {
    pub fn new(q: DVector<f64>, dq: DVector<f64>) -> Self {
        Self { q, dq }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, dq: DVector::zeros(n) }
    }

    pub fn check(&self, model: &ChainModel) -> Result<(), DynamicsError> {
        let n = model.dof();
        if self.q.len() != n || self.dq.len() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, found: self.q.len().max(self.dq.len()) });
        }
        Ok(())
    }
}
