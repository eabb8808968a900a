//! The live session: a recording-mode simulation driven by operator
//! commands, the record/replay state machine and state decimation. Nothing
//! here touches the network.

use std::collections::VecDeque;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rspread_core::control::{Mode, RecordingTarget, Variant};
use rspread_core::liegroup::{from_quaternion, Rotation, Twist6, Vec3};
use rspread_core::reference::{serialize_recording, serialize_reference, ExtendedReference, Recording};
use rspread_harness::metrics::{torque_norm_series, windowed_average};
use rspread_harness::{reference_from, run_episode, HarnessError, NoiseModel, RecordingSim, Scenario, StepRecord};

use crate::wire::{Ack, AckKind, ArmSelector, ArmState, BoxPose, CommandMsg, ErrorCode, Hello, StateMsg, Stream, WireError, WIRE_SCHEMA_VERSION};

pub type ClientId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub noise: NoiseModel,
    pub seed: u64,
    /// Control ticks per state message (20 at 1 kHz gives 50 Hz).
    pub decimation: usize,
    /// Where finished recordings and references are written.
    pub output_dir: Option<PathBuf>,
    /// Noise seed of replay episodes.
    pub replay_seed: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self { noise: NoiseModel::none(), seed: 0, decimation: 20, output_dir: None, replay_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Recording,
    Replaying,
}

/// Reflection about the plane through `centre` with unit normal `n`, applied
/// to a full reference: positions and linear velocities reflect, rotations
/// are conjugated and angular velocities (pseudovectors) flip sign. Posture
/// set points are copied unchanged.
pub fn mirror_target(target: &RecordingTarget, centre: &Vec3, n: &Vec3) -> RecordingTarget {
    let s: Rotation = Rotation::identity() - n * n.transpose() * 2.0;
    let v = s * target.v_d.fixed_rows::<3>(0);
    let w = -(s * target.v_d.fixed_rows::<3>(3));
    RecordingTarget {
        p_d: centre + s * (target.p_d - centre),
        r_d: s * target.r_d * s,
        v_d: Twist6::new(v.x, v.y, v.z, w.x, w.y, w.z),
        xi_d: target.xi_d,
        dxi_d: target.dxi_d,
    }
}

pub struct LiveSim {
    scenario: Scenario,
    config: LiveConfig,
    sim: RecordingSim,
    targets: Vec<RecordingTarget>,
    home: Vec<RecordingTarget>,
    owner: Option<ClientId>,
    replay: VecDeque<StateMsg>,
    last_recording: Option<Recording>,
    reference: Option<ExtendedReference>,
    ticks: u64,
    saved: usize,
}

impl LiveSim {
    pub fn new(scenario: Scenario, config: LiveConfig) -> Self {
        let op = scenario.config.operator;
        let home: Vec<RecordingTarget> = scenario.plans.iter().map(|p| op.target(p, 0.0)).collect();
        let sim = RecordingSim::new(&scenario, config.noise, config.seed, 0.0);
        Self {
            scenario,
            config,
            sim,
            targets: home.clone(),
            home,
            owner: None,
            replay: VecDeque::new(),
            last_recording: None,
            reference: None,
            ticks: 0,
            saved: 0,
        }
    }

    pub fn hello(&self) -> Hello {
        let dt = self.scenario.dt();
        Hello {
            schema_version: WIRE_SCHEMA_VERSION,
            server: Some(format!("rspread-teleop {}", env!("CARGO_PKG_VERSION"))),
            dt: Some(dt),
            state_rate_hz: Some(1.0 / (dt * self.config.decimation as f64)),
            arms: Some(self.arms()),
        }
    }

    pub fn arms(&self) -> usize {
        self.scenario.plant.arms.len()
    }

    pub fn decimation(&self) -> usize {
        self.config.decimation.max(1)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn status(&self) -> SessionStatus {
        if self.sim.is_recording() {
            SessionStatus::Recording
        } else if !self.replay.is_empty() {
            SessionStatus::Replaying
        } else {
            SessionStatus::Idle
        }
    }

    pub fn targets(&self) -> &[RecordingTarget] {
        &self.targets
    }

    pub fn sim(&self) -> &RecordingSim {
        &self.sim
    }

    pub fn last_recording(&self) -> Option<&Recording> {
        self.last_recording.as_ref()
    }

    pub fn reference(&self) -> Option<&ExtendedReference> {
        self.reference.as_ref()
    }

    /// Sets the impedance reference held from the next tick on. Only
    /// reference signals change; torques always come from the QP.
    pub fn apply_command(&mut self, cmd: &CommandMsg) -> Result<(), WireError> {
        let target = |base: &RecordingTarget| RecordingTarget {
            p_d: Vec3::from(cmd.p),
            r_d: from_quaternion(&cmd.q),
            v_d: Twist6::from(cmd.v_d),
            xi_d: base.xi_d,
            dxi_d: 0.0,
        };
        match cmd.arm {
            ArmSelector::Index(i) if i < self.targets.len() => self.targets[i] = target(&self.home[i]),
            ArmSelector::Index(i) => return Err(WireError::new(ErrorCode::Invalid, format!("no arm {i}"))),
            ArmSelector::Mirrored(_) => {
                if self.targets.len() != 2 {
                    return Err(WireError::new(ErrorCode::Invalid, "mirrored commands need two arms"));
                }
                let t = target(&self.home[0]);
                let n = self.scenario.plant.approach[0];
                let mut m = mirror_target(&t, &self.scenario.plant.box_body.p, &n);
                m.xi_d = self.home[1].xi_d;
                self.targets = vec![t, m];
            }
        }
        Ok(())
    }

    /// One control tick. Returns a state message on every `decimation`-th tick.
    pub fn tick(&mut self) -> Result<Option<StateMsg>, HarnessError> {
        let step = match self.sim.step(&self.targets) {
            Ok(s) => s.clone(),
            Err(e) => {
                self.reset_scene();
                return Err(e);
            }
        };
        self.ticks += 1;
        if !self.ticks.is_multiple_of(self.decimation() as u64) {
            return Ok(None);
        }
        Ok(Some(state_from_step(Stream::Live, &step, Some(&self.targets), self.sim.is_recording())))
    }

    pub fn next_replay_frame(&mut self) -> Option<StateMsg> {
        self.replay.pop_front()
    }

    fn reset_scene(&mut self) {
        self.sim = RecordingSim::new(&self.scenario, self.config.noise, self.config.seed, self.sim.time());
        self.targets = self.home.clone();
        self.owner = None;
    }

    pub fn record_start(&mut self, client: ClientId) -> Result<Ack, WireError> {
        match self.status() {
            SessionStatus::Recording => return Err(WireError::new(ErrorCode::Busy, "already recording")),
            SessionStatus::Replaying => return Err(WireError::new(ErrorCode::Busy, "a replay is streaming")),
            SessionStatus::Idle => {}
        }
        self.sim.start_recording();
        self.owner = Some(client);
        Ok(Ack::new(AckKind::RecordStart))
    }

    pub fn record_stop(&mut self) -> Result<Ack, WireError> {
        let Some(rec) = self.sim.stop_recording() else {
            return Err(WireError::new(ErrorCode::NotRecording, "no recording is active"));
        };
        self.owner = None;
        let mut ack = Ack::new(AckKind::RecordStop);
        ack.detail.samples = Some(rec.len());
        match reference_from(&self.scenario, &rec) {
            Ok(r) => {
                ack.detail.t_r = Some(r.t_r);
                self.reference = Some(r);
            }
            Err(e) => ack.detail.warning = Some(format!("recording kept but not replayable: {e}")),
        }
        if let Some(dir) = &self.config.output_dir {
            if let Err(e) = self.save(dir.clone(), &rec, &mut ack) {
                ack.detail.warning = Some(format!("could not write files: {e}"));
            }
        }
        self.last_recording = Some(rec);
        Ok(ack)
    }

    fn save(&mut self, dir: PathBuf, rec: &Recording, ack: &mut Ack) -> std::io::Result<()> {
        std::fs::create_dir_all(&dir)?;
        self.saved += 1;
        let rec_path = dir.join(format!("recording-{:03}.rec", self.saved));
        std::fs::write(&rec_path, serialize_recording(rec))?;
        ack.detail.recording_file = Some(rec_path.display().to_string());
        if let (Some(r), Some(_)) = (&self.reference, ack.detail.t_r) {
            let ref_path = dir.join(format!("reference-{:03}.ref", self.saved));
            std::fs::write(&ref_path, serialize_reference(r))?;
            ack.detail.reference_file = Some(ref_path.display().to_string());
        }
        Ok(())
    }

    /// Called when a client goes away. A recording it started is stopped
    /// cleanly and kept.
    pub fn client_gone(&mut self, client: ClientId) -> Option<Ack> {
        if self.owner == Some(client) {
            self.record_stop().ok()
        } else {
            None
        }
    }

    /// Runs an autonomous episode on the last reference and queues its
    /// decimated states. The live scene restarts from home afterwards.
    pub fn replay(&mut self, variant: Variant, displacement: f64) -> Result<Ack, WireError> {
        match self.status() {
            SessionStatus::Recording => return Err(WireError::new(ErrorCode::Busy, "replay is not allowed while recording")),
            SessionStatus::Replaying => return Err(WireError::new(ErrorCode::Busy, "a replay is streaming")),
            SessionStatus::Idle => {}
        }
        let Some(reference) = &self.reference else {
            return Err(WireError::new(ErrorCode::NoReference, "record a demonstration first"));
        };
        let log = run_episode(&self.scenario, reference, variant, displacement, self.config.replay_seed)
            .map_err(|e| WireError::new(ErrorCode::ReplayFailed, e.to_string()))?;
        let mut ack = Ack::new(AckKind::Replay);
        ack.detail.t_r = Some(reference.t_r);
        ack.detail.t_imp = log.detection.map(|e| e.time);
        ack.detail.tau_norm_avg = windowed_average(&torque_norm_series(&log), reference.t_r).ok();
        let d = self.decimation();
        self.replay = log.steps.iter().step_by(d).map(|s| state_from_step(Stream::Replay, s, None, false)).collect();
        self.reset_scene();
        Ok(ack)
    }
}

fn unit(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

pub fn state_from_step(stream: Stream, s: &StepRecord, targets: Option<&[RecordingTarget]>, recording: bool) -> StateMsg {
    let arms = (0..s.position.len())
        .map(|i| ArmState {
            p: s.position[i],
            q: unit(s.orientation[i]),
            v: s.velocity[i],
            p_d: targets.and_then(|t| t.get(i)).map(|t| [t.p_d.x, t.p_d.y, t.p_d.z]),
        })
        .collect();
    let b = s.box_pose;
    StateMsg {
        stream,
        t: s.t,
        arms,
        box_pose: BoxPose { p: [b[0], b[1], b[2]], q: unit([b[3], b[4], b[5], b[6]]) },
        contact: s.in_contact.clone(),
        tau_norm: s.tau_norm,
        mode: if stream == Stream::Live { Mode::Recording } else { s.mode },
        gamma: s.gamma,
        recording,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{Mirrored, WireMessage};
    use rspread_core::dynamics::{ee_kinematics, RobotState};
    use rspread_core::liegroup::{exp_so3, rotation_defect, to_quaternion};

    fn live() -> LiveSim {
        LiveSim::new(Scenario::default_scenario(), LiveConfig::default())
    }

    #[test]
    fn mirror_maps_one_home_pose_onto_the_other() {
        let s = Scenario::default_scenario();
        let op = s.config.operator;
        let a = op.target(&s.plans[0], 0.0);
        let b = op.target(&s.plans[1], 0.0);
        let m = mirror_target(&a, &s.plant.box_body.p, &s.plant.approach[0]);
        assert!((m.p_d - b.p_d).norm() < 1e-9);
        assert!((m.r_d - b.r_d).norm() < 1e-9);
        assert!(rotation_defect(&m.r_d) < 1e-12 && m.r_d.determinant() > 0.0);
    }

    #[test]
    fn mirror_is_an_involution_and_keeps_kinematic_consistency() {
        let s = Scenario::default_scenario();
        let (c, n) = (s.plant.box_body.p, s.plant.approach[0]);
        let r0 = exp_so3(&Vec3::new(0.3, -0.2, 0.5));
        let w = Vec3::new(0.4, 0.1, -0.7);
        let v = Vec3::new(0.1, 0.2, -0.3);
        let t = RecordingTarget { p_d: Vec3::new(0.1, -0.4, 0.5), r_d: r0, v_d: Twist6::new(v.x, v.y, v.z, w.x, w.y, w.z), xi_d: 0.2, dxi_d: 0.0 };
        let back = mirror_target(&mirror_target(&t, &c, &n), &c, &n);
        assert!((back.p_d - t.p_d).norm() < 1e-12 && (back.r_d - t.r_d).norm() < 1e-12 && (back.v_d - t.v_d).norm() < 1e-12);
        // Advancing then mirroring equals mirroring then advancing.
        let h = 1e-6;
        let ahead = RecordingTarget { p_d: t.p_d + v * h, r_d: exp_so3(&(w * h)) * r0, ..t };
        let (m0, m1) = (mirror_target(&t, &c, &n), mirror_target(&ahead, &c, &n));
        let mw = m0.v_d.fixed_rows::<3>(3).into_owned();
        assert!(((m1.p_d - m0.p_d) / h - m0.v_d.fixed_rows::<3>(0)).norm() < 1e-6);
        assert!((m1.r_d - exp_so3(&(mw * h)) * m0.r_d).norm() / h < 1e-5);
    }

    #[test]
    fn states_are_decimated_to_fifty_hertz() {
        let mut l = live();
        let mut states = Vec::new();
        for _ in 0..1000 {
            if let Some(s) = l.tick().unwrap() {
                states.push(s);
            }
        }
        assert_eq!(states.len(), 50);
        assert!(states.windows(2).all(|w| w[1].t > w[0].t));
        assert!(states.iter().all(|s| WireMessage::State(s.clone()).validate().is_ok()));
    }

    #[test]
    fn held_reference_keeps_the_arms_still_without_commands() {
        let mut l = live();
        for _ in 0..500 {
            l.tick().unwrap();
        }
        for (arm, tg) in l.targets().iter().enumerate() {
            let rs = &l.sim().world().states[arm];
            let kin = ee_kinematics(&l.scenario().plant.arms[arm], &RobotState::new(rs.q.clone(), rs.dq.clone()));
            assert!((kin.p - tg.p_d).norm() < 2e-3, "arm {arm} drifted {}", (kin.p - tg.p_d).norm());
        }
    }

    #[test]
    fn replay_is_rejected_while_recording() {
        let mut l = live();
        assert_eq!(l.replay(Variant::Proposed, 0.0).unwrap_err().code, ErrorCode::NoReference);
        l.record_start(7).unwrap();
        assert_eq!(l.status(), SessionStatus::Recording);
        assert_eq!(l.replay(Variant::Proposed, 0.0).unwrap_err().code, ErrorCode::Busy);
        assert_eq!(l.record_start(8).unwrap_err().code, ErrorCode::Busy);
        for _ in 0..100 {
            l.tick().unwrap();
        }
        let ack = l.record_stop().unwrap();
        assert_eq!(ack.detail.samples, Some(100));
        // No impact in a still scene, so nothing to replay.
        assert!(ack.detail.warning.is_some());
        assert_eq!(l.record_stop().unwrap_err().code, ErrorCode::NotRecording);
    }

    #[test]
    fn dropped_owner_stops_recording_cleanly() {
        let mut l = live();
        l.record_start(3).unwrap();
        for _ in 0..250 {
            l.tick().unwrap();
        }
        assert!(l.client_gone(4).is_none());
        assert_eq!(l.status(), SessionStatus::Recording);
        let ack = l.client_gone(3).expect("owner leaving stops the recording");
        assert_eq!(ack.detail.samples, Some(250));
        assert_eq!(l.status(), SessionStatus::Idle);
        let rec = l.last_recording().unwrap();
        let text = serialize_recording(rec);
        assert_eq!(&rspread_core::reference::deserialize_recording(&text).unwrap(), rec);
        assert!((rec.t0 - 0.0).abs() < 1e-12 && rec.len() == 250);
    }

    #[test]
    fn mirrored_command_sets_both_targets() {
        let mut l = live();
        let home = l.targets()[0];
        let p = home.p_d + Vec3::new(0.0, 0.02, 0.01);
        let cmd =
            CommandMsg { arm: ArmSelector::Mirrored(Mirrored::BothMirrored), p: p.into(), q: to_quaternion(&home.r_d), v_d: [0.0, 0.1, 0.0, 0.0, 0.0, 0.0] };
        l.apply_command(&cmd).unwrap();
        let t = l.targets();
        assert!((t[0].p_d - p).norm() < 1e-12);
        let c = l.scenario().plant.box_body.p;
        assert!((t[1].p_d.y - c.y + (p.y - c.y)).abs() < 1e-12 && (t[1].p_d.z - p.z).abs() < 1e-12);
        assert!((t[1].v_d[1] + 0.1).abs() < 1e-12);
        let bad = CommandMsg { arm: ArmSelector::Index(5), ..cmd };
        assert_eq!(l.apply_command(&bad).unwrap_err().code, ErrorCode::Invalid);
    }
}
