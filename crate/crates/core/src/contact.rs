//! Compliant pad–box contact and box rigid-body dynamics.
//!
//! Each end-effector carries a spherical pad centred on the end-effector
//! origin. Normal forces follow a Kelvin–Voigt law, tangential forces a
//! tanh-regularized Coulomb law. The box rests on a compliant support plane
//! with a stick–slip anchor friction model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liegroup::{exp_so3, orthonormalize, rot_z, Rotation, Twist6, Vec3, Wrench6};

/// Largest box displacement accepted by [`displace_box`] (m).
pub const MAX_DISPLACEMENT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("box displacement {0} m exceeds ±{MAX_DISPLACEMENT} m")]
    OutOfRange(f64),
    #[error("invalid contact parameters: {0}")]
    InvalidParams(String),
}

/// Pad–face contact law parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub pad_radius: f64,
    /// Normal stiffness `k_c` (N/m).
    pub stiffness: f64,
    /// Normal damping `c_c` (N·s/m).
    pub damping: f64,
    pub friction: f64,
    /// Tangential regularization velocity `ε` (m/s).
    pub reg_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { pad_radius: 0.02, stiffness: 1e4, damping: 200.0, friction: 0.8, reg_velocity: 0.01 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), ContactError> {
        let all = [self.pad_radius, self.stiffness, self.damping, self.friction, self.reg_velocity];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(ContactError::InvalidParams("all pad contact parameters must be positive".into()))
        }
    }
}

/// Support plane under the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportParams {
    /// Plane height (m).
    pub height: f64,
    pub stiffness: f64,
    pub damping: f64,
    /// Stiffness of the stick anchor (N/m).
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    pub friction: f64,
    /// Effective radius of the torsional friction patch (m).
    pub torsion_radius: f64,
}

impl Default for SupportParams {
    fn default() -> Self {
        Self { height: 0.0, stiffness: 5e4, damping: 500.0, tangential_stiffness: 5e4, tangential_damping: 500.0, friction: 0.5, torsion_radius: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
struct StickAnchor {
    xy: [f64; 2],
    yaw: f64,
}

/// Box rigid body. By default the box translates and yaws only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBody {
    pub mass: f64,
    pub half_extents: Vec3,
    pub p: Vec3,
    pub r: Rotation,
    pub v: Vec3,
    pub w: Vec3,
    pub support: SupportParams,
    /// Allow roll and pitch.
    pub free_rotation: bool,
    yaw: f64,
    anchor: Option<StickAnchor>,
}

impl BoxBody {
    /// Box resting with its bottom face on the support plane.
    pub fn resting(mass: f64, half_extents: Vec3, x: f64, y: f64, yaw: f64, support: SupportParams) -> Self {
        Self {
            mass,
            half_extents,
            p: Vec3::new(x, y, support.height + half_extents.z),
            r: rot_z(yaw),
            v: Vec3::zeros(),
            w: Vec3::zeros(),
            support,
            free_rotation: false,
            yaw,
            anchor: None,
        }
    }

    pub fn inertia_body(&self) -> Vec3 {
        let d = self.half_extents * 2.0;
        let k = self.mass / 12.0;
        Vec3::new(k * (d.y * d.y + d.z * d.z), k * (d.x * d.x + d.z * d.z), k * (d.x * d.x + d.y * d.y))
    }

    pub fn point_velocity(&self, x: &Vec3) -> Vec3 {
        self.v + self.w.cross(&(x - self.p))
    }

    /// Penetration of the support plane by the lowest point.
    pub fn support_penetration(&self) -> f64 {
        self.support.height - self.lowest_corner().z
    }

    fn lowest_corner(&self) -> Vec3 {
        let mut lowest = Vec3::new(0.0, 0.0, f64::INFINITY);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let c = self.p + self.r * self.half_extents.component_mul(&Vec3::new(sx, sy, sz));
                    if c.z < lowest.z {
                        lowest = c;
                    }
                }
            }
        }
        lowest
    }
}

/// Pad centre pose and twist, i.e. the end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadState {
    pub p: Vec3,
    pub twist: Twist6,
}

impl PadState {
    fn point_velocity(&self, x: &Vec3) -> Vec3 {
        let v = self.twist.fixed_rows::<3>(0).into_owned();
        let w = self.twist.fixed_rows::<3>(3).into_owned();
        v + w.cross(&(x - self.p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PadContact {
    /// Penetration depth δ (m).
    pub penetration: f64,
    pub normal_force: f64,
    /// Tangential force on the pad (N).
    pub tangential_force: Vec3,
    pub in_contact: bool,
    /// Outward box normal at the contact.
    pub normal: Vec3,
    pub point: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSnapshot {
    pub pads: Vec<PadContact>,
    /// Wrench on each arm about its end-effector origin.
    pub arm_wrench: Vec<Wrench6>,
    /// Wrench on the box about its centre.
    pub box_wrench: Wrench6,
}

fn wrench(force: &Vec3, torque: &Vec3) -> Wrench6 {
    Wrench6::new(force.x, force.y, force.z, torque.x, torque.y, torque.z)
}

/// Closest box surface point to `c` (world), the outward normal there and the
/// signed distance of `c` from the surface (negative inside).
fn closest_surface(body: &BoxBody, c: &Vec3) -> (Vec3, Vec3, f64) {
    let h = body.half_extents;
    let local = body.r.transpose() * (c - body.p);
    let clamped = Vec3::new(local.x.clamp(-h.x, h.x), local.y.clamp(-h.y, h.y), local.z.clamp(-h.z, h.z));
    let d = local - clamped;
    let dist = d.norm();
    if dist > 0.0 {
        return (body.p + body.r * clamped, body.r * (d / dist), dist);
    }
    // Centre inside the box: push out through the nearest face.
    let gaps = [h.x - local.x.abs(), h.y - local.y.abs(), h.z - local.z.abs()];
    let axis = (0..3).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap_or(0);
    let mut n_local = Vec3::zeros();
    n_local[axis] = if local[axis] >= 0.0 { 1.0 } else { -1.0 };
    let mut surface = local;
    surface[axis] = n_local[axis] * h[axis];
    (body.p + body.r * surface, body.r * n_local, -gaps[axis])
}

pub fn contact_wrenches(pads: &[PadState], body: &BoxBody, params: &ContactParams) -> ContactSnapshot {
    let mut snapshot = ContactSnapshot { pads: Vec::with_capacity(pads.len()), arm_wrench: Vec::with_capacity(pads.len()), box_wrench: Wrench6::zeros() };
    let mut box_force = Vec3::zeros();
    let mut box_torque = Vec3::zeros();
    for pad in pads {
        let (point, normal, dist) = closest_surface(body, &pad.p);
        let penetration = params.pad_radius - dist;
        if penetration <= 0.0 {
            snapshot.pads.push(PadContact { normal, point, ..Default::default() });
            snapshot.arm_wrench.push(Wrench6::zeros());
            continue;
        }
        let v_rel = pad.point_velocity(&point) - body.point_velocity(&point);
        let approach = -v_rel.dot(&normal);
        let normal_force = (params.stiffness * penetration + params.damping * approach).max(0.0);
        let v_t = v_rel - normal * v_rel.dot(&normal);
        let speed = v_t.norm();
        let tangential_force = if speed > 0.0 { -v_t * (params.friction * normal_force * (speed / params.reg_velocity).tanh() / speed) } else { Vec3::zeros() };
        let force = normal * normal_force + tangential_force;
        snapshot.arm_wrench.push(wrench(&force, &(point - pad.p).cross(&force)));
        box_force -= force;
        box_torque -= (point - body.p).cross(&force);
        snapshot.pads.push(PadContact { penetration, normal_force, tangential_force, in_contact: true, normal, point });
    }
    snapshot.box_wrench = wrench(&box_force, &box_torque);
    snapshot
}

/// Advances the box by one semi-implicit Euler step under `wrench` (about the
/// box centre), gravity and the support plane.
pub fn step_box(body: &BoxBody, wrench: &Wrench6, gravity: &Vec3, h: f64) -> BoxBody {
    let mut next = body.clone();
    let s = &body.support;
    let mut force = wrench.fixed_rows::<3>(0).into_owned() + gravity * body.mass;
    let mut torque = wrench.fixed_rows::<3>(3).into_owned();

    let lowest = body.lowest_corner();
    let depth = s.height - lowest.z;
    if depth > 0.0 {
        let contact_point = Vec3::new(body.p.x, body.p.y, s.height);
        let vz = body.point_velocity(&lowest).z;
        let normal = (s.stiffness * depth - s.damping * vz).max(0.0);
        let anchor = body.anchor.unwrap_or(StickAnchor { xy: [body.p.x, body.p.y], yaw: body.yaw });
        let cap = s.friction * normal;

        let slip = Vec3::new(body.p.x - anchor.xy[0], body.p.y - anchor.xy[1], 0.0);
        let spring = -slip * s.tangential_stiffness;
        let mut ft = spring - Vec3::new(body.v.x, body.v.y, 0.0) * s.tangential_damping;
        let mut new_anchor = anchor;
        if ft.norm() > cap {
            ft *= cap / ft.norm();
            new_anchor.xy = [body.p.x + ft.x / s.tangential_stiffness, body.p.y + ft.y / s.tangential_stiffness];
        }

        let k_yaw = s.tangential_stiffness * s.torsion_radius * s.torsion_radius;
        let c_yaw = s.tangential_damping * s.torsion_radius * s.torsion_radius;
        let cap_yaw = cap * s.torsion_radius;
        let mut tz = -k_yaw * (body.yaw - anchor.yaw) - c_yaw * body.w.z;
        if tz.abs() > cap_yaw {
            tz = tz.signum() * cap_yaw;
            new_anchor.yaw = body.yaw + tz / k_yaw;
        }
        next.anchor = Some(new_anchor);

        force += Vec3::new(ft.x, ft.y, normal);
        torque += (contact_point - body.p).cross(&Vec3::new(ft.x, ft.y, normal)) + Vec3::new(0.0, 0.0, tz);
    } else {
        next.anchor = None;
    }

    next.v = body.v + force * (h / body.mass);
    next.p = body.p + next.v * h;
    let inertia = body.inertia_body();
    if body.free_rotation {
        let i_world = body.r * nalgebra::Matrix3::from_diagonal(&inertia) * body.r.transpose();
        let gyro = body.w.cross(&(i_world * body.w));
        let alpha = i_world.try_inverse().unwrap_or_else(nalgebra::Matrix3::zeros) * (torque - gyro);
        next.w = body.w + alpha * h;
        next.r = orthonormalize(&(exp_so3(&(next.w * h)) * body.r));
        next.yaw = next.r[(1, 0)].atan2(next.r[(0, 0)]);
    } else {
        next.w = Vec3::new(0.0, 0.0, body.w.z + torque.z / inertia.z * h);
        next.yaw = body.yaw + next.w.z * h;
        next.r = rot_z(next.yaw);
    }
    next
}

/// Shifts the box along world y.
pub fn displace_box(body: &BoxBody, dy: f64) -> Result<BoxBody, ContactError> {
    if !(dy.abs() <= MAX_DISPLACEMENT) {
        return Err(ContactError::OutOfRange(dy));
    }
    let mut next = body.clone();
    next.p.y += dy;
    if let Some(a) = next.anchor.as_mut() {
        a.xy[1] += dy;
    }
    Ok(next)
}
