//! Scripted stand-in for the human demonstrator: approach, clamp, lift.

use serde::{Deserialize, Serialize};

use rspread_core::control::RecordingTarget;
use rspread_core::liegroup::{Rotation, Twist6, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedOperator {
    /// Cruise speed towards the box faces (m/s).
    pub approach_speed: f64,
    /// Clamp force the pressed-in target should produce (N).
    pub clamp_force: f64,
    pub lift_height: f64,
    pub hold_time: f64,
    pub accel_time: f64,
    pub decel_time: f64,
    pub clamp_time: f64,
    pub lift_time: f64,
    pub settle_time: f64,
}

impl Default for ScriptedOperator {
    fn default() -> Self {
        Self {
            approach_speed: 0.9,
            clamp_force: 15.0,
            lift_height: 0.1,
            hold_time: 0.5,
            accel_time: 0.2,
            decel_time: 0.1,
            clamp_time: 0.4,
            lift_time: 1.0,
            settle_time: 0.3,
        }
    }
}

/// Where one arm starts and how far it presses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPlan {
    pub start: Vec3,
    pub rotation: Rotation,
    pub approach: Vec3,
    /// Free distance to the face (m).
    pub gap: f64,
    /// Target travel beyond first contact (m).
    pub press_depth: f64,
    /// Posture joint set point (rad).
    pub xi: f64,
}

/// Cosine-blended ramp of height `h` over `[0, d]`: value and rate.
fn smooth_step(t: f64, d: f64, h: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= d {
        (h, 0.0)
    } else {
        let s = std::f64::consts::PI * t / d;
        (h * (1.0 - s.cos()) / 2.0, h * std::f64::consts::PI / (2.0 * d) * s.sin())
    }
}

impl ScriptedOperator {
    pub fn validate(&self, plan: &ArmPlan) -> Result<(), String> {
        if !(self.approach_speed > 0.0) {
            return Err("approach speed must be positive".into());
        }
        if self.cruise_distance(plan) < 0.0 {
            return Err("gap too short for the acceleration and braking phases".into());
        }
        Ok(())
    }

    fn cruise_distance(&self, plan: &ArmPlan) -> f64 {
        plan.gap + plan.press_depth - self.approach_speed * (self.accel_time + self.decel_time) / 2.0
    }

    /// Travel along the approach direction and its rate.
    fn approach_profile(&self, plan: &ArmPlan, t: f64) -> (f64, f64) {
        let v = self.approach_speed;
        let t = t - self.hold_time;
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        let ta = self.accel_time;
        if t < ta {
            // Integral of v(1 − cos(πs/ta))/2.
            let s = std::f64::consts::PI * t / ta;
            return (v / 2.0 * (t - ta / std::f64::consts::PI * s.sin()), v * (1.0 - s.cos()) / 2.0);
        }
        let d_acc = v * ta / 2.0;
        let t_cruise = self.cruise_distance(plan).max(0.0) / v;
        if t < ta + t_cruise {
            return (d_acc + v * (t - ta), v);
        }
        let td = self.decel_time;
        let tb = t - ta - t_cruise;
        let base = d_acc + v * t_cruise;
        if tb < td {
            let s = std::f64::consts::PI * tb / td;
            return (base + v / 2.0 * (tb + td / std::f64::consts::PI * s.sin()), v * (1.0 + s.cos()) / 2.0);
        }
        (base + v * td / 2.0, 0.0)
    }

    /// Time at which the approach target comes to rest.
    pub fn approach_end(&self, plan: &ArmPlan) -> f64 {
        self.hold_time + self.accel_time + self.cruise_distance(plan).max(0.0) / self.approach_speed + self.decel_time
    }

    /// Ideal first-contact time if the pad followed the target exactly.
    pub fn nominal_contact_time(&self, plan: &ArmPlan) -> f64 {
        let d_acc = self.approach_speed * self.accel_time / 2.0;
        self.hold_time + self.accel_time + (plan.gap - d_acc) / self.approach_speed
    }

    pub fn duration(&self, plan: &ArmPlan) -> f64 {
        self.approach_end(plan) + self.clamp_time + self.lift_time + self.settle_time
    }

    pub fn target(&self, plan: &ArmPlan, t: f64) -> RecordingTarget {
        let (u, du) = self.approach_profile(plan, t);
        let (z, dz) = smooth_step(t - self.approach_end(plan) - self.clamp_time, self.lift_time, self.lift_height);
        let p_d = plan.start + plan.approach * u + Vec3::z() * z;
        let v = plan.approach * du + Vec3::z() * dz;
        RecordingTarget { p_d, r_d: plan.rotation, v_d: Twist6::new(v.x, v.y, v.z, 0.0, 0.0, 0.0), xi_d: plan.xi, dxi_d: 0.0 }
    }
}
