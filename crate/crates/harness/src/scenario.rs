//! The grasp-and-lift scenario: plant, gains, detector, operator, noise and
//! home configurations.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use rspread_core::control::{ControllerConfig, Variant};
use rspread_core::detection::{DetectorParams, DEFAULT_OBSERVER_GAIN};
use rspread_core::dynamics::{ee_kinematics, RobotState};
use rspread_core::liegroup::{Rotation, Vec3};
use rspread_core::plant::Plant;
use rspread_core::reference::RsParams;

use crate::ik::{solve_ik, IkOptions};
use crate::operator::{ArmPlan, ScriptedOperator};
use crate::HarnessError;

/// Zero-mean Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// On measured joint velocities (rad/s).
    pub sigma_dq: f64,
    /// On each component of the estimated force (N).
    pub sigma_f: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_dq: 1e-3, sigma_f: 0.2 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { sigma_dq: 0.0, sigma_f: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub params: RsParams,
    pub detector: DetectorParams,
    pub observer_gain: f64,
    pub operator: ScriptedOperator,
    pub noise: NoiseModel,
    /// Free distance between each pad and its box face at home (m).
    pub gap: f64,
    /// Autonomous episodes run until `T_r + tail` (s).
    pub tail: f64,
    /// Seed configuration for the home IK.
    pub ik_seed: Vec<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            params: RsParams::default(),
            detector: DetectorParams::default(),
            observer_gain: DEFAULT_OBSERVER_GAIN,
            operator: ScriptedOperator::default(),
            noise: NoiseModel::default(),
            gap: 0.15,
            tail: 0.3,
            ik_seed: vec![0.0, 0.2, 0.0, -2.2, 0.0, 2.4, 0.8],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: Plant,
    pub config: ScenarioConfig,
    pub home: Vec<DVector<f64>>,
    pub plans: Vec<ArmPlan>,
}

/// Tool pointing down with x along the approach direction.
fn tool_rotation(approach: &Vec3) -> Rotation {
    let z = -Vec3::z();
    let x = (approach - z * approach.dot(&z)).normalize();
    let y = z.cross(&x);
    Rotation::from_columns(&[x, y, z])
}

impl Scenario {
    pub fn new(plant: Plant, config: ScenarioConfig) -> Result<Self, HarnessError> {
        if !config.params.validate() || !config.detector.validate() {
            return Err(HarnessError::Invalid("gains and detector thresholds must be positive".into()));
        }
        let body = &plant.box_body;
        let mut home = Vec::new();
        let mut plans = Vec::new();
        for (model, n) in plant.arms.iter().zip(&plant.approach) {
            let face = n.abs().dot(&body.half_extents);
            let contact = body.p - n * (face + plant.contact.pad_radius);
            let start = contact - n * config.gap;
            let rotation = tool_rotation(n);
            let seed = DVector::from_column_slice(&config.ik_seed);
            if seed.len() != model.dof() {
                return Err(HarnessError::Invalid(format!("IK seed has {} entries, chain has {} joints", seed.len(), model.dof())));
            }
            let (q, err) = solve_ik(model, &start, &rotation, &seed, &IkOptions::default());
            if err > 1e-8 {
                return Err(HarnessError::Invalid(format!("home pose unreachable (residual {err:.3e})")));
            }
            let kin = ee_kinematics(model, &RobotState::at_rest(q.clone()));
            // Press far enough that the recording-gain spring and the pad settle at the clamp force.
            let k_lin = config.params.k_r[0];
            let press_depth = config.operator.clamp_force / k_lin + config.operator.clamp_force / plant.contact.stiffness;
            let plan = ArmPlan { start: kin.p, rotation: kin.r, approach: *n, gap: config.gap, press_depth, xi: q[0] };
            config.operator.validate(&plan).map_err(HarnessError::Invalid)?;
            home.push(q);
            plans.push(plan);
        }
        Ok(Self { plant, config, home, plans })
    }

    pub fn default_scenario() -> Self {
        Self::new(Plant::default_plant(), ScenarioConfig::default()).expect("default scenario is valid")
    }

    pub fn controller(&self, variant: Variant) -> ControllerConfig {
        ControllerConfig { params: self.config.params.clone(), variant, posture_joint: 0, gravity: self.plant.gravity }
    }

    pub fn dt(&self) -> f64 {
        self.config.params.dt
    }

    /// Demonstration length (s).
    pub fn demonstration_time(&self) -> f64 {
        self.plans.iter().map(|p| self.config.operator.duration(p)).fold(0.0, f64::max)
    }
}
