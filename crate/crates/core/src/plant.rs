//! Plant description file: both arm chains, base poses, gravity, the box, its
//! support and the pad contact law.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{BoxBody, ContactParams, SupportParams};
use crate::dynamics::{ChainModel, Joint, Pose};
use crate::liegroup::{rot_x, rot_z, Vec3};

pub const PLANT_SCHEMA_VERSION: u32 = 1;

/// The plant shipped with the crate.
pub const DEFAULT_PLANT: &str = include_str!("../config/plant.toml");

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("cannot read plant file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse plant file: {0}")]
    Parse(String),
    #[error("plant schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("invalid plant: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub mass: f64,
    pub com: [f64; 3],
    /// Principal moments about the centre of mass (kg·m²).
    pub inertia: [f64; 3],
    pub q_limits: [f64; 2],
    pub dq_max: f64,
    pub tau_max: f64,
    #[serde(default)]
    pub armature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub ee_offset: [f64; 3],
    pub joints: Vec<JointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub base_position: [f64; 3],
    pub base_yaw: f64,
    /// World direction in which this arm closes on the box.
    pub approach: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub mass: f64,
    pub half_extents: [f64; 3],
    /// x, y of the box centre.
    pub position: [f64; 2],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFile {
    pub schema_version: u32,
    pub gravity: [f64; 3],
    pub chain: ChainSpec,
    pub arms: Vec<ArmSpec>,
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    pub support: SupportParams,
    pub contact: ContactParams,
}

/// Parsed, validated plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub gravity: Vec3,
    pub arms: Vec<ChainModel>,
    pub arm_names: Vec<String>,
    pub approach: Vec<Vec3>,
    pub box_body: BoxBody,
    pub contact: ContactParams,
}

impl ChainSpec {
    pub fn model(&self, base: Pose) -> ChainModel {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let rot = rot_x(j.alpha);
                Joint {
                    origin: Pose::new(rot, Vec3::new(j.a, 0.0, 0.0) + rot * Vec3::new(0.0, 0.0, j.d)),
                    axis: Vec3::z(),
                    mass: j.mass,
                    com: Vec3::from(j.com),
                    inertia: Matrix3::from_diagonal(&Vec3::from(j.inertia)),
                    q_min: j.q_limits[0],
                    q_max: j.q_limits[1],
                    dq_max: j.dq_max,
                    tau_max: j.tau_max,
                    armature: j.armature,
                }
            })
            .collect();
        ChainModel { base, joints, ee: Pose::from_translation(Vec3::from(self.ee_offset)) }
    }
}

impl Plant {
    pub fn default_plant() -> Self {
        Self::from_toml(DEFAULT_PLANT).expect("bundled plant file is valid")
    }

    pub fn load(path: &Path) -> Result<Self, PlantError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, PlantError> {
        let file: PlantFile = toml::from_str(text).map_err(|e| PlantError::Parse(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &PlantFile) -> Result<Self, PlantError> {
        if file.schema_version != PLANT_SCHEMA_VERSION {
            return Err(PlantError::SchemaVersionMismatch { expected: PLANT_SCHEMA_VERSION, found: file.schema_version });
        }
        if file.arms.is_empty() {
            return Err(PlantError::Invalid("no arms".into()));
        }
        let mut arms = Vec::new();
        let mut approach = Vec::new();
        for spec in &file.arms {
            let base = Pose::new(rot_z(spec.base_yaw), Vec3::from(spec.base_position));
            let model = file.chain.model(base);
            model.validate().map_err(|e| PlantError::Invalid(format!("arm {}: {e}", spec.name)))?;
            let n = Vec3::from(spec.approach);
            if n.norm() < 1e-9 {
                return Err(PlantError::Invalid(format!("arm {}: approach direction is zero", spec.name)));
            }
            arms.push(model);
            approach.push(n.normalize());
        }
        file.contact.validate().map_err(|e| PlantError::Invalid(e.to_string()))?;
        let b = &file.box_spec;
        if !(b.mass > 0.0) || b.half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(PlantError::Invalid("box mass and half extents must be positive".into()));
        }
        let box_body = BoxBody::resting(b.mass, Vec3::from(b.half_extents), b.position[0], b.position[1], b.yaw, file.support);
        Ok(Self {
            gravity: Vec3::from(file.gravity),
            arms,
            arm_names: file.arms.iter().map(|a| a.name.clone()).collect(),
            approach,
            box_body,
            contact: file.contact,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ee_kinematics, RobotState};
    use nalgebra::DVector;

    #[test]
    fn bundled_plant_loads() {
        let p = Plant::default_plant();
        assert_eq!(p.arms.len(), 2);
        assert!(p.arms.iter().all(|a| a.dof() == 7));
        assert_eq!(p.box_body.mass, 1.25);
        assert!((p.box_body.p.z - 0.35).abs() < 1e-12);
    }

    #[test]
    fn arms_mirror_each_other() {
        let p = Plant::default_plant();
        let q = DVector::from_vec(vec![0.0, 0.3, 0.0, -1.9, 0.0, 2.2, 0.7]);
        let a = ee_kinematics(&p.arms[0], &RobotState::at_rest(q.clone()));
        let b = ee_kinematics(&p.arms[1], &RobotState::at_rest(q));
        assert!((a.p.x - b.p.x).abs() < 1e-12 && (a.p.y + b.p.y).abs() < 1e-12 && (a.p.z - b.p.z).abs() < 1e-12);
    }

    #[test]
    fn zero_configuration_closed_form() {
        // Upright chain with the flange pointing down.
        let p = Plant::default_plant();
        let k = ee_kinematics(&p.arms[0], &RobotState::at_rest(DVector::zeros(7)));
        let expected = Vec3::new(0.0, -0.7 + 0.088, 0.333 + 0.316 + 0.384 - 0.207);
        assert!((k.p - expected).norm() < 1e-12, "{}", k.p);
        assert!((k.r * Vec3::z() + Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn rejects_wrong_version_and_bad_values() {
        let bumped = DEFAULT_PLANT.replacen("schema_version = 1", "schema_version = 7", 1);
        assert!(matches!(Plant::from_toml(&bumped), Err(PlantError::SchemaVersionMismatch { found: 7, .. })));
        let heavy = DEFAULT_PLANT.replacen("mass = 1.25", "mass = -1.25", 1);
        assert!(matches!(Plant::from_toml(&heavy), Err(PlantError::Invalid(_))));
        assert!(matches!(Plant::from_toml("gravity = 3"), Err(PlantError::Parse(_))));
    }
}
