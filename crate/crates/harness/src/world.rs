//! Two arms, the box and their contacts, integrated at a fine substep with
//! the commanded torque held over each control period.

use nalgebra::DVector;

use rspread_core::contact::{contact_wrenches, step_box, BoxBody, ContactParams, ContactSnapshot, PadState};
use rspread_core::dynamics::{forward_dynamics_from, integrate, snapshot, ChainModel, RobotState};
use rspread_core::liegroup::{Vec3, Wrench6};

pub const SUBSTEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct World {
    pub arms: Vec<ChainModel>,
    pub states: Vec<RobotState>,
    pub body: BoxBody,
    pub contact: ContactParams,
    pub gravity: Vec3,
    pub substep: f64,
    pub substeps: usize,
    pub time: f64,
    /// Contact state at the end of the last substep.
    pub last_contact: ContactSnapshot,
}

/// Ground truth gathered over one control period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTruth {
    /// Pads touching the box at any substep of the period.
    pub touched: Vec<bool>,
    /// Contact force on each arm at the end of the period.
    pub arm_force: Vec<Vec3>,
}

impl World {
    pub fn new(arms: Vec<ChainModel>, states: Vec<RobotState>, body: BoxBody, contact: ContactParams, gravity: Vec3, control_dt: f64) -> Self {
        let substeps = ((control_dt / SUBSTEP).round() as usize).max(1);
        let n = arms.len();
        Self {
            arms,
            states,
            body,
            contact,
            gravity,
            substep: control_dt / substeps as f64,
            substeps,
            time: 0.0,
            last_contact: ContactSnapshot { pads: vec![Default::default(); n], arm_wrench: vec![Wrench6::zeros(); n], box_wrench: Wrench6::zeros() },
        }
    }

    /// Advances one control period under `tau`. Fails if the state stops
    /// being finite.
    pub fn step(&mut self, tau: &[DVector<f64>]) -> Result<StepTruth, String> {
        let n = self.arms.len();
        let mut touched = vec![false; n];
        for _ in 0..self.substeps {
            let snaps: Vec<_> = self.arms.iter().zip(&self.states).map(|(m, s)| snapshot(m, s, &self.gravity)).collect();
            let pads: Vec<PadState> = snaps.iter().map(|s| PadState { p: s.kin.p, twist: s.kin.v }).collect();
            let contact = contact_wrenches(&pads, &self.body, &self.contact);
            for (i, snap) in snaps.iter().enumerate() {
                touched[i] |= contact.pads[i].in_contact;
                let ddq = forward_dynamics_from(snap, &tau[i], &contact.arm_wrench[i]).map_err(|e| e.to_string())?;
                self.states[i] = integrate(&self.states[i], &ddq, self.substep);
            }
            self.body = step_box(&self.body, &contact.box_wrench, &self.gravity, self.substep);
            self.last_contact = contact;
        }
        self.time += self.substep * self.substeps as f64;
        let finite = self.states.iter().all(|s| s.q.iter().chain(s.dq.iter()).all(|v| v.is_finite())) && self.body.p.iter().all(|v| v.is_finite());
        if !finite {
            return Err(format!("state diverged at t = {:.4} s", self.time));
        }
        let arm_force = self.last_contact.arm_wrench.iter().map(|w| Vec3::new(w[0], w[1], w[2])).collect();
        Ok(StepTruth { touched, arm_force })
    }
}
