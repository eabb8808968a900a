//! Demonstration recordings and the extended ante/post-impact references.

mod filter;
mod io;

pub use filter::{filtfilt, Biquad};
pub use io::{deserialize_recording, deserialize_reference, serialize_recording, serialize_reference, SCHEMA_VERSION};

use nalgebra::{DVector, Matrix6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{detect, DetectorParams};
use crate::liegroup::{exp_so3, from_quaternion, geodesic, to_quaternion, Rotation, Twist6, Vec3, Wrench6};

/// Cut-off of the velocity low-pass applied before extension (Hz).
pub const VELOCITY_CUTOFF: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("no impact found in the recording")]
    NoImpactFound,
    #[error("extension window [{t_a}, {t_p}] does not fit inside the recording [{start}, {end}] with margin {margin}")]
    WindowOutOfRange { t_a: f64, t_p: f64, start: f64, end: f64, margin: f64 },
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: u32, found: String },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
}

/// One recorded control step of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSample {
    pub p: Vec3,
    /// Unit quaternion (w, x, y, z).
    pub quat: [f64; 4],
    /// Measured twist.
    pub twist: Twist6,
    pub xi: f64,
    pub dxi: f64,
    pub f_ff: Wrench6,
    pub beta: f64,
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub f_est: Vec3,
}

impl ArmSample {
    pub fn rotation(&self) -> Rotation {
        from_quaternion(&self.quat)
    }

    pub fn set_rotation(&mut self, r: &Rotation) {
        self.quat = to_quaternion(r);
    }
}

/// Uniformly sampled demonstration, one sample series per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub dt: f64,
    pub t0: f64,
    pub dof: usize,
    pub arms: Vec<Vec<ArmSample>>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.arms.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        let bad = |m: String| Err(ReferenceError::InvalidRecording(m));
        if !(self.dt > 0.0) {
            return bad("sample period must be positive".into());
        }
        if self.arms.is_empty() {
            return bad("no arms".into());
        }
        let n = self.len();
        for (a, series) in self.arms.iter().enumerate() {
            if series.len() != n {
                return bad(format!("arm {a} has {} samples, expected {n}", series.len()));
            }
            for (k, s) in series.iter().enumerate() {
                let qn = s.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (qn - 1.0).abs() > 1e-9 {
                    return bad(format!("arm {a} sample {k}: quaternion norm {qn}"));
                }
                if s.q.len() != self.dof || s.dq.len() != self.dof {
                    return bad(format!("arm {a} sample {k}: joint vector length"));
                }
            }
        }
        Ok(())
    }
}

/// Append-only capture buffer.
#[derive(Debug, Clone)]
pub struct Recorder {
    rec: Recording,
}

impl Recorder {
    pub fn new(dt: f64, t0: f64, arms: usize, dof: usize) -> Self {
        Self { rec: Recording { dt, t0, dof, arms: vec![Vec::new(); arms] } }
    }

    pub fn push(&mut self, samples: Vec<ArmSample>) {
        assert_eq!(samples.len(), self.rec.arms.len(), "one sample per arm");
        for (series, s) in self.rec.arms.iter_mut().zip(samples) {
            series.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.rec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rec.is_empty()
    }

    pub fn recording(&self) -> &Recording {
        &self.rec
    }

    pub fn finish(self) -> Recording {
        self.rec
    }
}

/// First sample at which the detector fires on any arm.
pub fn extract_nominal_impact_time(rec: &Recording, det: &DetectorParams) -> Result<f64, ReferenceError> {
    rec.arms
        .iter()
        .filter_map(|series| {
            let v: Vec<Vec3> = series.iter().map(|s| s.twist.fixed_rows::<3>(0).into_owned()).collect();
            let f: Vec<Vec3> = series.iter().map(|s| s.f_est).collect();
            detect(&v, &f, det, rec.dt)
        })
        .min()
        .map(|k| rec.time(k))
        .ok_or(ReferenceError::NoImpactFound)
}

/// Reference signals of one arm at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub p: Vec3,
    pub r: Rotation,
    pub twist: Twist6,
    pub f_ff: Wrench6,
    pub xi: f64,
    pub dxi: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Track {
    p: Vec<Vec3>,
    r: Vec<Rotation>,
    twist: Vec<Twist6>,
    f_ff: Vec<Wrench6>,
    xi: Vec<f64>,
    dxi: Vec<f64>,
    beta: Vec<f64>,
}

impl Track {
    fn from_series(series: &[ArmSample], dt: f64) -> Self {
        let mut twist = vec![Twist6::zeros(); series.len()];
        for c in 0..6 {
            let raw: Vec<f64> = series.iter().map(|s| s.twist[c]).collect();
            for (t, v) in twist.iter_mut().zip(filtfilt(&raw, VELOCITY_CUTOFF, dt)) {
                t[c] = v;
            }
        }
        let raw_dxi: Vec<f64> = series.iter().map(|s| s.dxi).collect();
        Self {
            p: series.iter().map(|s| s.p).collect(),
            r: series.iter().map(|s| s.rotation()).collect(),
            twist,
            f_ff: series.iter().map(|s| s.f_ff).collect(),
            xi: series.iter().map(|s| s.xi).collect(),
            dxi: filtfilt(&raw_dxi, VELOCITY_CUTOFF, dt),
            beta: series.iter().map(|s| s.beta).collect(),
        }
    }

    /// Interpolated recording at grid position `k + s`, `s ∈ [0, 1]`.
    /// Positions use cubic Hermite segments with the filtered velocities as
    /// tangents, rotations the geodesic.
    fn at(&self, k: usize, s: f64, dt: f64) -> RefSample {
        let n = self.p.len();
        if n == 1 || (s == 0.0) {
            return self.sample(k);
        }
        let j = (k + 1).min(n - 1);
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        let v0 = self.twist[k].fixed_rows::<3>(0).into_owned();
        let v1 = self.twist[j].fixed_rows::<3>(0).into_owned();
        let p = self.p[k] * h00 + v0 * (h10 * dt) + self.p[j] * h01 + v1 * (h11 * dt);
        let xi = self.xi[k] * h00 + self.dxi[k] * h10 * dt + self.xi[j] * h01 + self.dxi[j] * h11 * dt;
        let lerp = |a: f64, b: f64| a + (b - a) * s;
        RefSample {
            p,
            r: geodesic(&self.r[k], &self.r[j], s).unwrap_or(self.r[k]),
            twist: self.twist[k] + (self.twist[j] - self.twist[k]) * s,
            f_ff: self.f_ff[k] + (self.f_ff[j] - self.f_ff[k]) * s,
            xi,
            dxi: lerp(self.dxi[k], self.dxi[j]),
            beta: lerp(self.beta[k], self.beta[j]),
        }
    }

    fn hermite_rate(&self, k: usize, s: f64, dt: f64) -> Vec3 {
        let j = (k + 1).min(self.p.len() - 1);
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -6.0 * s * s + 6.0 * s;
        let d11 = 3.0 * s * s - 2.0 * s;
        let v0 = self.twist[k].fixed_rows::<3>(0).into_owned();
        let v1 = self.twist[j].fixed_rows::<3>(0).into_owned();
        (self.p[k] * d00 + self.p[j] * d01) / dt + v0 * d10 + v1 * d11
    }

    fn sample(&self, k: usize) -> RefSample {
        RefSample { p: self.p[k], r: self.r[k], twist: self.twist[k], f_ff: self.f_ff[k], xi: self.xi[k], dxi: self.dxi[k], beta: self.beta[k] }
    }
}

/// Overlapping ante- and post-impact references built from one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedReference {
    pub t_r: f64,
    pub delta_t_r: f64,
    pub t_a: f64,
    pub t_p: f64,
    recording: Recording,
    k_a: usize,
    k_p: usize,
    tracks: Vec<Track>,
}

/// Splits `rec` at `T_r ± ΔT_r` (snapped to the sample grid).
pub fn extend(rec: &Recording, t_r: f64, delta_t_r: f64) -> Result<ExtendedReference, ReferenceError> {
    rec.validate()?;
    let start = rec.t0;
    let end = rec.end_time();
    let out_of_range = || ReferenceError::WindowOutOfRange { t_a: t_r - delta_t_r, t_p: t_r + delta_t_r, start, end, margin: delta_t_r };
    if !(delta_t_r > 0.0) || !(t_r - delta_t_r > start + delta_t_r) || !(t_r + delta_t_r < end - delta_t_r) {
        return Err(out_of_range());
    }
    let k_a = ((t_r - delta_t_r - start) / rec.dt).round() as usize;
    let k_p = ((t_r + delta_t_r - start) / rec.dt).round() as usize;
    if k_p >= rec.len() {
        return Err(out_of_range());
    }
    Ok(ExtendedReference {
        t_r,
        delta_t_r,
        t_a: rec.time(k_a),
        t_p: rec.time(k_p),
        recording: rec.clone(),
        k_a,
        k_p,
        tracks: rec.arms.iter().map(|s| Track::from_series(s, rec.dt)).collect(),
    })
}

impl ExtendedReference {
    pub fn arms(&self) -> usize {
        self.tracks.len()
    }

    pub fn recording(&self) -> &Recording {
        &self.recording
    }

    pub fn start_time(&self) -> f64 {
        self.recording.t0
    }

    pub fn end_time(&self) -> f64 {
        self.recording.end_time()
    }

    /// Interpolated (velocity-filtered) recording, held constant outside it.
    pub fn nominal(&self, arm: usize, t: f64) -> RefSample {
        let track = &self.tracks[arm];
        let n = track.p.len();
        let mut x = ((t - self.recording.t0) / self.recording.dt).clamp(0.0, (n - 1) as f64);
        if (x - x.round()).abs() < 1e-9 {
            x = x.round();
        }
        let k = (x.floor() as usize).min(n.saturating_sub(2));
        track.at(k, x - k as f64, self.recording.dt)
    }

    pub fn ante(&self, arm: usize, t: f64) -> RefSample {
        if t <= self.t_a {
            return self.nominal(arm, t);
        }
        let base = self.tracks[arm].sample(self.k_a);
        Self::hold(base, t - self.t_a)
    }

    pub fn post(&self, arm: usize, t: f64) -> RefSample {
        if t >= self.t_p {
            return self.nominal(arm, t);
        }
        let base = self.tracks[arm].sample(self.k_p);
        Self::hold(base, t - self.t_p)
    }

    /// Constant-velocity continuation of `base` by `tau` seconds.
    fn hold(base: RefSample, tau: f64) -> RefSample {
        let v = base.twist.fixed_rows::<3>(0).into_owned();
        let w = base.twist.fixed_rows::<3>(3).into_owned();
        // Angular velocity is world-aligned, so R_r·exp(hat(Rᵀω)τ) = exp(hat(ω)τ)·R_r.
        RefSample { p: base.p + v * tau, r: exp_so3(&(w * tau)) * base.r, xi: base.xi + base.dxi * tau, ..base }
    }

    /// Left and right time derivatives of the ante position at `T_a`.
    pub fn ante_position_rates(&self, arm: usize) -> (Vec3, Vec3) {
        let track = &self.tracks[arm];
        let right = track.twist[self.k_a].fixed_rows::<3>(0).into_owned();
        if self.k_a == 0 {
            return (right, right);
        }
        (track.hermite_rate(self.k_a - 1, 1.0, self.recording.dt), right)
    }
}

/// Reference-spreading parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsParams {
    /// Control period Δt (s).
    pub dt: f64,
    /// Exclusion half-width ΔT_r (s).
    pub delta_t_r: f64,
    /// Interim duration Δt_int (s).
    pub delta_t_int: f64,
    pub k_r: [f64; 6],
    pub k_ante: [f64; 6],
    pub k_int: [f64; 6],
    pub k_post: [f64; 6],
    pub k_pos_r: f64,
    pub k_pos_ante: f64,
    pub k_pos_int: f64,
    pub k_pos_post: f64,
    pub w_imp: f64,
    pub w_pos: f64,
}

impl Default for RsParams {
    fn default() -> Self {
        let high = [2000.0, 2000.0, 2000.0, 20.0, 20.0, 20.0];
        Self {
            dt: 1e-3,
            delta_t_r: 0.1,
            delta_t_int: 0.1,
            k_r: [300.0, 300.0, 300.0, 10.0, 10.0, 10.0],
            k_ante: high,
            k_int: high,
            k_post: high,
            k_pos_r: 500.0,
            k_pos_ante: 500.0,
            k_pos_int: 500.0,
            k_pos_post: 500.0,
            w_imp: 1.0,
            w_pos: 1.0,
        }
    }
}

impl RsParams {
    pub fn validate(&self) -> bool {
        let scalars = [self.dt, self.delta_t_r, self.delta_t_int, self.k_pos_r, self.k_pos_ante, self.k_pos_int, self.k_pos_post, self.w_imp, self.w_pos];
        let gains = [self.k_r, self.k_ante, self.k_int, self.k_post];
        scalars.iter().all(|v| *v > 0.0) && gains.iter().flatten().all(|v| *v > 0.0)
    }

    pub fn stiffness(gains: &[f64; 6]) -> Matrix6<f64> {
        Matrix6::from_diagonal(&nalgebra::Vector6::from_column_slice(gains))
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::liegroup::rot_z;

    /// Recording whose arm 0 moves with `p(t)`, `ω(t)` and the rest zero.
    pub fn synthetic(n: usize, dt: f64, p: impl Fn(f64) -> (Vec3, Vec3), w: impl Fn(f64) -> Vec3) -> Recording {
        let mut rec = Recorder::new(dt, 0.0, 2, 2);
        let mut r = rot_z(0.3);
        for k in 0..n {
            let t = k as f64 * dt;
            let (pos, vel) = p(t);
            let omega = w(t);
            let sample = |pos: Vec3, r: &Rotation| ArmSample {
                p: pos,
                quat: to_quaternion(r),
                twist: Twist6::new(vel.x, vel.y, vel.z, omega.x, omega.y, omega.z),
                xi: 0.1 * t,
                dxi: 0.1,
                f_ff: Wrench6::new(0.0, if t > 1.0 { 15.0 } else { 0.0 }, 0.0, 0.0, 0.0, 0.0),
                beta: 0.0,
                q: DVector::from_vec(vec![0.1 * t, 0.0]),
                dq: DVector::from_vec(vec![0.1, 0.0]),
                f_est: Vec3::zeros(),
            };
            let a = sample(pos, &r);
            let mut b = a.clone();
            b.p.y = -b.p.y;
            rec.push(vec![a, b]);
            r = exp_so3(&(omega * dt)) * r;
        }
        rec.finish()
    }
}
