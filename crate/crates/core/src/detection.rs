//! Momentum-observer force estimation and the three-condition impact detector.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrench_from_joint_torque, DynamicsSnapshot};
use crate::liegroup::Vec3;

pub const DEFAULT_OBSERVER_GAIN: f64 = 100.0;

/// Generalized-momentum residual observer for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumObserver {
    pub gain: f64,
    /// Residual, an estimate of the external joint torque (N·m).
    pub residual: DVector<f64>,
    integral: DVector<f64>,
    p0: DVector<f64>,
    prev_mass: Option<DMatrix<f64>>,
}

impl MomentumObserver {
    pub fn new(dof: usize, gain: f64) -> Self {
        assert!(gain > 0.0, "observer gain must be positive");
        Self { gain, residual: DVector::zeros(dof), integral: DVector::zeros(dof), p0: DVector::zeros(dof), prev_mass: None }
    }

    /// Advances the residual `r = K_o (M q̇ − p₀ − ∫(τ − h + Ṁq̇ + r) dt)`.
    /// `Ṁq̇` is taken from the mass-matrix change since the previous call.
    /// Returns the linear part of `(Jᵀ)⁺ r`.
    pub fn step(&mut self, snap: &DynamicsSnapshot, dq: &DVector<f64>, tau: &DVector<f64>, h: f64) -> Vec3 {
        let momentum = &snap.mass * dq;
        match &self.prev_mass {
            None => {
                self.p0 = momentum.clone();
                self.integral.fill(0.0);
            }
            Some(prev) => {
                let dm_dq = (&snap.mass - prev) * dq;
                self.integral += (tau - &snap.bias + &self.residual) * h + dm_dq;
            }
        }
        self.prev_mass = Some(snap.mass.clone());
        self.residual = (momentum - &self.p0 - &self.integral) * self.gain;
        self.force(snap)
    }

    pub fn force(&self, snap: &DynamicsSnapshot) -> Vec3 {
        let w = wrench_from_joint_torque(&snap.kin.j, &self.residual);
        Vec3::new(w[0], w[1], w[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Lookback Δt_det (s).
    pub window: f64,
    /// b_f,low (N).
    pub force_low: f64,
    /// b_f,high (N).
    pub force_high: f64,
    /// b_v (m/s).
    pub velocity: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self { window: 0.2, force_low: 4.0, force_high: 8.0, velocity: 0.025 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> bool {
        self.force_high > self.force_low && self.force_low > 0.0 && self.velocity > 0.0 && self.window > 0.0
    }

    /// Number of samples spanning the lookback at period `dt`.
    pub fn lookback(&self, dt: f64) -> usize {
        ((self.window / dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// All three conditions for one sample pair.
    pub fn fires(&self, v_prev: &Vec3, f_prev: &Vec3, f_now: &Vec3) -> bool {
        let fn_now = f_now.norm();
        f_prev.norm() < self.force_low && fn_now > self.force_high && v_prev.dot(f_now) < -self.velocity * fn_now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub arm: usize,
    pub time: f64,
}

/// Batch detection over one arm's uniformly sampled history. Returns the
/// first index at which all conditions hold.
pub fn detect(velocity: &[Vec3], force: &[Vec3], params: &DetectorParams, dt: f64) -> Option<usize> {
    let lag = params.lookback(dt);
    let n = velocity.len().min(force.len());
    (lag..n).find(|&k| params.fires(&velocity[k - lag], &force[k - lag], &force[k]))
}

/// Streaming detector over all arms with a ring buffer per arm. Emits at most
/// one event, then stays disarmed.
#[derive(Debug, Clone)]
pub struct ImpactDetector {
    pub params: DetectorParams,
    lag: usize,
    history: Vec<VecDeque<(Vec3, Vec3)>>,
    armed: bool,
    event: Option<DetectionEvent>,
}

impl ImpactDetector {
    pub fn new(params: DetectorParams, dt: f64, arms: usize) -> Self {
        let lag = params.lookback(dt);
        Self { params, lag, history: vec![VecDeque::with_capacity(lag + 1); arms], armed: true, event: None }
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn disarm(&mut self) {
        self.armed = false;
    }

    pub fn event(&self) -> Option<DetectionEvent> {
        self.event
    }

    /// Pushes one sample (linear velocity, estimated force) per arm.
    pub fn push(&mut self, time: f64, samples: &[(Vec3, Vec3)]) -> Option<DetectionEvent> {
        let mut fired = None;
        for (arm, (buf, &(v, f))) in self.history.iter_mut().zip(samples).enumerate() {
            buf.push_back((v, f));
            if buf.len() > self.lag + 1 {
                buf.pop_front();
            }
            if self.armed && fired.is_none() && buf.len() == self.lag + 1 {
                let (v_prev, f_prev) = buf[0];
                if self.params.fires(&v_prev, &f_prev, &f) {
                    fired = Some(DetectionEvent { arm, time });
                }
            }
        }
        if fired.is_some() {
            self.event = fired;
            self.armed = false;
        }
        fired
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{forward_dynamics_from, integrate, snapshot, test_chains, RobotState};
    use crate::liegroup::Wrench6;

    const DT: f64 = 1e-3;

    fn series(n: usize, v: impl Fn(usize) -> Vec3, f: impl Fn(usize) -> Vec3) -> (Vec<Vec3>, Vec<Vec3>) {
        ((0..n).map(&v).collect(), (0..n).map(&f).collect())
    }

    #[test]
    fn lookback_is_exact() {
        assert_eq!(DetectorParams::default().lookback(DT), 200);
    }

    #[test]
    fn approach_then_jump_fires_at_jump() {
        let p = DetectorParams::default();
        let (v, f) = series(1000, |_| Vec3::new(0.0, 0.1, 0.0), |k| if k >= 600 { Vec3::new(0.0, -12.0, 0.0) } else { Vec3::zeros() });
        assert_eq!(detect(&v, &f, &p, DT), Some(600));
    }

    #[test]
    fn chatter_below_threshold_is_ignored() {
        let p = DetectorParams::default();
        let (v, f) = series(2000, |_| Vec3::new(0.0, 0.1, 0.0), |k| Vec3::new(0.0, -3.5 * ((k as f64) * 0.7).sin(), 0.0));
        assert_eq!(detect(&v, &f, &p, DT), None);
    }

    #[test]
    fn in_contact_ramp_is_ignored() {
        let p = DetectorParams::default();
        let (v, f) = series(2000, |_| Vec3::new(0.0, 0.001, 0.0), |k| Vec3::new(0.0, -(10.0 + 20.0 * k as f64 / 2000.0), 0.0));
        assert_eq!(detect(&v, &f, &p, DT), None);
        // A ramp starting from zero is blocked by the velocity condition alone.
        let (v, f) = series(2000, |_| Vec3::zeros(), |k| Vec3::new(0.0, -(30.0 * k as f64 / 2000.0), 0.0));
        assert_eq!(detect(&v, &f, &p, DT), None);
    }

    #[test]
    fn streaming_matches_batch_and_fires_once() {
        let p = DetectorParams::default();
        let (v, f) = series(1500, |_| Vec3::new(0.0, -0.1, 0.0), |k| if k >= 700 { Vec3::new(0.0, 15.0, 0.0) } else { Vec3::zeros() });
        let mut det = ImpactDetector::new(p, DT, 2);
        let mut events = Vec::new();
        for k in 0..v.len() {
            let quiet = (Vec3::zeros(), Vec3::zeros());
            if let Some(e) = det.push(k as f64 * DT, &[quiet, (v[k], f[k])]) {
                events.push((k, e));
            }
        }
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].0, detect(&v, &f, &p, DT).unwrap());
        assert_eq!(events[0].1.arm, 1);
        assert!(!det.armed());
    }

    #[test]
    fn raising_high_threshold_never_detects_earlier() {
        let (v, f) = series(1500, |_| Vec3::new(0.0, 0.1, 0.0), |k| Vec3::new(0.0, -(k as f64 - 500.0).max(0.0) * 0.5, 0.0));
        let mut last = 0;
        for high in [5.0, 8.0, 12.0, 20.0, 40.0] {
            let p = DetectorParams { force_high: high, ..Default::default() };
            let k = detect(&v, &f, &p, DT).unwrap_or(usize::MAX);
            assert!(k >= last);
            last = k;
        }
    }

    fn observer_run(wrench: Wrench6, seconds: f64, h: f64) -> (Vec<Vec3>, Vec3) {
        let model = test_chains::spatial7();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let mut state = RobotState::at_rest(DVector::from_vec(vec![0.2, 0.5, -0.3, -1.6, 0.2, 1.4, 0.1]));
        let mut obs = MomentumObserver::new(7, DEFAULT_OBSERVER_GAIN);
        let mut out = Vec::new();
        let steps = (seconds / h).round() as usize;
        for _ in 0..steps {
            let snap = snapshot(&model, &state, &g);
            // Gravity compensation plus light joint damping.
            let tau = &snap.bias - &state.dq * 2.0;
            out.push(obs.step(&snap, &state.dq, &tau, h));
            let ddq = forward_dynamics_from(&snap, &tau, &wrench).unwrap();
            state = integrate(&state, &ddq, h);
        }
        (out, Vec3::new(wrench[0], wrench[1], wrench[2]))
    }

    #[test]
    fn observer_free_motion_stays_near_zero() {
        let (est, _) = observer_run(Wrench6::zeros(), 0.5, 1e-4);
        assert!(est.iter().skip(1000).all(|f| f.norm() < 0.1));
    }

    #[test]
    fn observer_converges_to_constant_force() {
        let h = 1e-4;
        let (est, truth) = observer_run(Wrench6::new(0.0, 10.0, 0.0, 0.0, 0.0, 0.0), 0.1, h);
        let k = ((5.0 / DEFAULT_OBSERVER_GAIN) / h).round() as usize;
        let err = (est[k] - truth).norm() / truth.norm();
        assert!(err < 0.05, "relative error {err}");
        // First-order rise: 10 %→90 % takes about 2.2/K_o.
        let frac = |f: &Vec3| f.dot(&truth) / truth.norm_squared();
        let t10 = est.iter().position(|f| frac(f) >= 0.1).unwrap() as f64 * h;
        let t90 = est.iter().position(|f| frac(f) >= 0.9).unwrap() as f64 * h;
        let rise = t90 - t10;
        assert!((rise - 2.2 / DEFAULT_OBSERVER_GAIN).abs() < 0.1 * 2.2 / DEFAULT_OBSERVER_GAIN, "rise {rise}");
    }
}
