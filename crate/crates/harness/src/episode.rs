//! Demonstrations under the recording controller and autonomous episodes under
//! the reference-spreading supervisor variants.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use rspread_core::contact::displace_box;
use rspread_core::control::{control_step, recording_step, supervisor_step, ArmInput, ControlOutput, Mode, ModeState, RecordingTarget, Variant};
use rspread_core::detection::{DetectionEvent, ImpactDetector, MomentumObserver};
use rspread_core::dynamics::{snapshot, DynamicsSnapshot, RobotState};
use rspread_core::liegroup::{to_quaternion, Vec3};
use rspread_core::qp::QpSolver;
use rspread_core::reference::{extend, extract_nominal_impact_time, ArmSample, ExtendedReference, Recorder, Recording};

use crate::scenario::{NoiseModel, Scenario};
use crate::world::World;
use crate::HarnessError;

/// One control step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub mode: Mode,
    pub gamma: f64,
    /// Commanded torque per arm.
    pub tau: Vec<Vec<f64>>,
    pub tau_norm: f64,
    /// Commanded wrench per arm.
    pub wrench: Vec<[f64; 6]>,
    /// Commanded force along each arm's approach direction (N).
    pub normal_force: Vec<f64>,
    /// Measured end-effector velocity along the approach direction (m/s).
    pub normal_velocity: Vec<f64>,
    pub position: Vec<[f64; 3]>,
    /// End-effector orientation per arm as a unit quaternion (w, x, y, z).
    pub orientation: Vec<[f64; 4]>,
    /// End-effector twist per arm, mixed frame.
    pub velocity: Vec<[f64; 6]>,
    /// Box position and orientation quaternion (w, x, y, z).
    pub box_pose: [f64; 7],
    pub f_est: Vec<[f64; 3]>,
    pub in_contact: Vec<bool>,
    pub qp_iterations: usize,
    pub fallback: bool,
    pub damping_min_eig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub variant: Option<Variant>,
    pub displacement: f64,
    pub seed: u64,
    pub t_r: Option<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub steps: Vec<StepRecord>,
    pub detection: Option<DetectionEvent>,
    /// Ground-truth first pad contact time per arm.
    pub first_contact: Vec<Option<f64>>,
    /// Mode entry times in order.
    pub transitions: Vec<(f64, Mode)>,
}

impl EpisodeLog {
    pub fn first_contact_time(&self) -> Option<f64> {
        self.first_contact.iter().flatten().copied().reduce(f64::min)
    }

    pub fn fallbacks(&self) -> usize {
        self.steps.iter().filter(|s| s.fallback).count()
    }

    /// Index of the step at time `t` on the uniform grid.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let t0 = self.steps.first()?.t;
        let k = ((t - t0) / self.meta.dt).round();
        (k >= 0.0 && (k as usize) < self.steps.len()).then_some(k as usize)
    }
}

#[derive(Debug, Clone)]
pub struct Demonstration {
    pub recording: Recording,
    pub log: EpisodeLog,
    /// Box rise at the end of the demonstration (m).
    pub lift: f64,
}

/// Per-arm sensing: momentum observers and noise.
struct Sensors {
    observers: Vec<MomentumObserver>,
    noise: NoiseModel,
    rng: ChaCha8Rng,
    prev_tau: Vec<DVector<f64>>,
}

struct Measurement {
    states: Vec<RobotState>,
    snaps: Vec<DynamicsSnapshot>,
    f_est: Vec<Vec3>,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

impl Sensors {
    fn new(scenario: &Scenario, noise: NoiseModel, seed: u64, tau0: Vec<DVector<f64>>) -> Self {
        let observers = scenario.plant.arms.iter().map(|m| MomentumObserver::new(m.dof(), scenario.config.observer_gain)).collect();
        Self { observers, noise, rng: ChaCha8Rng::seed_from_u64(seed), prev_tau: tau0 }
    }

    fn measure(&mut self, world: &World, dt: f64) -> Measurement {
        let mut states = Vec::new();
        let mut snaps = Vec::new();
        let mut f_est = Vec::new();
        for (i, (model, truth)) in world.arms.iter().zip(&world.states).enumerate() {
            let mut s = truth.clone();
            for v in s.dq.iter_mut() {
                *v += gaussian(&mut self.rng, self.noise.sigma_dq);
            }
            let snap = snapshot(model, &s, &world.gravity);
            let mut f = self.observers[i].step(&snap, &s.dq, &self.prev_tau[i], dt);
            for c in f.iter_mut() {
                *c += gaussian(&mut self.rng, self.noise.sigma_f);
            }
            states.push(s);
            snaps.push(snap);
            f_est.push(f);
        }
        Measurement { states, snaps, f_est }
    }
}

fn record_step(t: f64, mode: &ModeState, out: &ControlOutput, m: &Measurement, world: &World, approach: &[Vec3]) -> StepRecord {
    let stacked: Vec<f64> = out.tau.iter().flat_map(|t| t.iter().copied()).collect();
    let tau_norm = stacked.iter().map(|v| v * v).sum::<f64>().sqrt();
    let wrench: Vec<[f64; 6]> =
        if out.arms.is_empty() { vec![[0.0; 6]; approach.len()] } else { out.arms.iter().map(|a| std::array::from_fn(|k| a.wrench[k])).collect() };
    StepRecord {
        t,
        mode: mode.mode,
        gamma: mode.gamma,
        tau: out.tau.iter().map(|t| t.iter().copied().collect()).collect(),
        tau_norm,
        normal_force: wrench.iter().zip(approach).map(|(w, n)| w[0] * n.x + w[1] * n.y + w[2] * n.z).collect(),
        wrench,
        normal_velocity: m.snaps.iter().zip(approach).map(|(s, n)| s.kin.v.fixed_rows::<3>(0).dot(n)).collect(),
        position: m.snaps.iter().map(|s| [s.kin.p.x, s.kin.p.y, s.kin.p.z]).collect(),
        orientation: m.snaps.iter().map(|s| to_quaternion(&s.kin.r)).collect(),
        velocity: m.snaps.iter().map(|s| std::array::from_fn(|k| s.kin.v[k])).collect(),
        box_pose: {
            let (p, q) = (world.body.p, to_quaternion(&world.body.r));
            [p.x, p.y, p.z, q[0], q[1], q[2], q[3]]
        },
        f_est: m.f_est.iter().map(|f| [f.x, f.y, f.z]).collect(),
        in_contact: world.last_contact.pads.iter().map(|p| p.in_contact).collect(),
        qp_iterations: out.qp_iterations,
        fallback: out.fallback.is_some(),
        damping_min_eig: out.arms.iter().map(|a| a.damping_min_eig).fold(f64::INFINITY, f64::min),
    }
}

fn gravity_torques(scenario: &Scenario, states: &[RobotState]) -> Vec<DVector<f64>> {
    scenario.plant.arms.iter().zip(states).map(|(m, s)| rspread_core::dynamics::gravity_torque(m, &s.q, &scenario.plant.gravity)).collect()
}

fn step_world(world: &mut World, tau: &[DVector<f64>], first_contact: &mut [Option<f64>]) -> Result<(), HarnessError> {
    let t_start = world.time;
    let truth = world.step(tau).map_err(HarnessError::SimDiverged)?;
    for (fc, touched) in first_contact.iter_mut().zip(&truth.touched) {
        if fc.is_none() && *touched {
            *fc = Some(t_start);
        }
    }
    Ok(())
}

/// Recording-mode closed loop advanced one control tick at a time. The
/// targets come from the scripted operator or from a live teleoperator.
pub struct RecordingSim {
    scenario: Scenario,
    world: World,
    sensors: Sensors,
    detector: ImpactDetector,
    solver: QpSolver,
    recorder: Option<Recorder>,
    log: EpisodeLog,
    z0: f64,
    last_fallback: Option<String>,
}

impl RecordingSim {
    /// Scene at home with the box at rest, clock at `t0`.
    pub fn new(scenario: &Scenario, noise: NoiseModel, seed: u64, t0: f64) -> Self {
        let dt = scenario.dt();
        let plant = &scenario.plant;
        let states: Vec<RobotState> = scenario.home.iter().map(|q| RobotState::at_rest(q.clone())).collect();
        let mut world = World::new(plant.arms.clone(), states.clone(), plant.box_body.clone(), plant.contact, plant.gravity, dt);
        world.time = t0;
        let sensors = Sensors::new(scenario, noise, seed, gravity_torques(scenario, &states));
        let z0 = world.body.p.z;
        Self {
            scenario: scenario.clone(),
            world,
            sensors,
            detector: ImpactDetector::new(scenario.config.detector, dt, plant.arms.len()),
            solver: QpSolver::new(),
            recorder: None,
            log: EpisodeLog {
                meta: EpisodeMeta { variant: None, displacement: 0.0, seed, t_r: None, dt },
                steps: Vec::new(),
                detection: None,
                first_contact: vec![None; plant.arms.len()],
                transitions: vec![(t0, Mode::Recording)],
            },
            z0,
            last_fallback: None,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    /// Box rise since the start (m).
    pub fn lift(&self) -> f64 {
        self.world.body.p.z - self.z0
    }

    /// Reason of the last gravity-compensation fallback, if the last step had one.
    pub fn last_fallback(&self) -> Option<&str> {
        self.last_fallback.as_deref()
    }

    pub fn is_recording(&self) -> bool {
        self.recorder.is_some()
    }

    /// Starts recording at the current time; returns false if already recording.
    pub fn start_recording(&mut self) -> bool {
        if self.recorder.is_some() {
            return false;
        }
        let dof = self.scenario.plant.arms[0].dof();
        self.recorder = Some(Recorder::new(self.scenario.dt(), self.world.time, self.scenario.plant.arms.len(), dof));
        true
    }

    /// Ends recording and returns what was captured.
    pub fn stop_recording(&mut self) -> Option<Recording> {
        self.recorder.take().map(Recorder::finish)
    }

    pub fn recorded_samples(&self) -> usize {
        self.recorder.as_ref().map_or(0, Recorder::len)
    }

    /// One control tick: measure, detect, solve the recording QP, record and
    /// advance the world by one control period.
    pub fn step(&mut self, targets: &[RecordingTarget]) -> Result<&StepRecord, HarnessError> {
        let dt = self.scenario.dt();
        let t = self.world.time;
        let m = self.sensors.measure(&self.world, dt);
        let samples: Vec<(Vec3, Vec3)> = m.snaps.iter().zip(&m.f_est).map(|(s, f)| (s.kin.v.fixed_rows::<3>(0).into_owned(), *f)).collect();
        if let Some(e) = self.detector.push(t, &samples) {
            if self.log.detection.is_none() {
                self.log.detection = Some(e);
            }
        }
        let plant = &self.scenario.plant;
        let cfg = self.scenario.controller(Variant::Proposed);
        let inputs: Vec<ArmInput<'_>> = plant.arms.iter().zip(&m.states).zip(&m.snaps).map(|((model, state), snap)| ArmInput { model, state, snap }).collect();
        let out = recording_step(&inputs, targets, &cfg, &mut self.solver);
        self.last_fallback = out.fallback.clone();
        if let Some(recorder) = &mut self.recorder {
            let samples = m
                .snaps
                .iter()
                .zip(&m.states)
                .zip(&out.arms)
                .zip(&m.f_est)
                .map(|(((snap, state), diag), f)| ArmSample {
                    p: snap.kin.p,
                    quat: to_quaternion(&snap.kin.r),
                    twist: snap.kin.v,
                    xi: state.q[cfg.posture_joint],
                    dxi: state.dq[cfg.posture_joint],
                    f_ff: diag.wrench,
                    beta: diag.beta,
                    q: state.q.clone(),
                    dq: state.dq.clone(),
                    f_est: *f,
                })
                .collect::<Vec<_>>();
            // A fallback step has no diagnostics; it is not recorded.
            if samples.len() == plant.arms.len() {
                recorder.push(samples);
            }
        }
        self.log.steps.push(record_step(t, &ModeState::recording(), &out, &m, &self.world, &plant.approach));
        step_world(&mut self.world, &out.tau, &mut self.log.first_contact)?;
        self.sensors.prev_tau = out.tau;
        Ok(self.log.steps.last().expect("just pushed"))
    }
}

/// Drives the recording-mode controller with the scripted operator, from the
/// home configuration, and records every signal needed for the reference.
pub fn run_demonstration(scenario: &Scenario) -> Result<Demonstration, HarnessError> {
    let op = &scenario.config.operator;
    for plan in &scenario.plans {
        op.validate(plan).map_err(HarnessError::DemonstrationFailed)?;
    }
    let dt = scenario.dt();
    let mut sim = RecordingSim::new(scenario, NoiseModel::none(), 0, 0.0);
    sim.start_recording();
    let steps = (scenario.demonstration_time() / dt).round() as usize;
    for k in 0..steps {
        let t = k as f64 * dt;
        let targets: Vec<_> = scenario.plans.iter().map(|p| op.target(p, t)).collect();
        sim.step(&targets)?;
        if let Some(reason) = sim.last_fallback() {
            return Err(HarnessError::DemonstrationFailed(format!("controller fell back at t = {t:.3} s: {reason}")));
        }
    }
    if sim.log().detection.is_none() {
        return Err(HarnessError::DemonstrationFailed("no impact detected".into()));
    }
    let lift = sim.lift();
    if lift < 0.5 * op.lift_height {
        return Err(HarnessError::DemonstrationFailed(format!("clamp lost: box rose {lift:.3} m")));
    }
    let recording = sim.stop_recording().expect("recording was started");
    Ok(Demonstration { recording, log: sim.log, lift })
}

/// Extends a recording around its detected impact.
pub fn reference_from(scenario: &Scenario, recording: &Recording) -> Result<ExtendedReference, HarnessError> {
    let t_r = extract_nominal_impact_time(recording, &scenario.config.detector)?;
    Ok(extend(recording, t_r, scenario.config.params.delta_t_r)?)
}

/// Scripted demonstration followed by reference extension.
pub fn demonstrate(scenario: &Scenario) -> Result<(Demonstration, ExtendedReference), HarnessError> {
    let demo = run_demonstration(scenario)?;
    let reference = reference_from(scenario, &demo.recording)?;
    Ok((demo, reference))
}

/// Runs one autonomous episode on the displaced box.
pub fn run_episode(scenario: &Scenario, reference: &ExtendedReference, variant: Variant, displacement: f64, seed: u64) -> Result<EpisodeLog, HarnessError> {
    let dt = scenario.dt();
    let plant = &scenario.plant;
    let rec = reference.recording();
    let states: Vec<RobotState> = rec.arms.iter().map(|a| RobotState::new(a[0].q.clone(), a[0].dq.clone())).collect();
    let body = displace_box(&plant.box_body, displacement).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let mut world = World::new(plant.arms.clone(), states.clone(), body, plant.contact, plant.gravity, dt);
    world.time = rec.t0;
    let mut sensors = Sensors::new(scenario, scenario.config.noise, seed, gravity_torques(scenario, &states));
    let mut detector = ImpactDetector::new(scenario.config.detector, dt, plant.arms.len());
    let cfg = scenario.controller(variant);
    let mut solver = QpSolver::new();
    let t_end = reference.t_r + scenario.config.tail;
    let steps = ((t_end - rec.t0) / dt).round() as usize + 1;
    let mut log = EpisodeLog {
        meta: EpisodeMeta { variant: Some(variant), displacement, seed, t_r: Some(reference.t_r), dt },
        steps: Vec::with_capacity(steps),
        detection: None,
        first_contact: vec![None; plant.arms.len()],
        transitions: vec![(rec.t0, Mode::Ante)],
    };
    let mut mode = ModeState::ante();
    let dt_int = cfg.params.delta_t_int;
    for k in 0..steps {
        let t = rec.t0 + k as f64 * dt;
        let m = sensors.measure(&world, dt);
        let mut event = None;
        if detector.armed() {
            let samples: Vec<(Vec3, Vec3)> = m.snaps.iter().zip(&m.f_est).map(|(s, f)| (s.kin.v.fixed_rows::<3>(0).into_owned(), *f)).collect();
            event = detector.push(t, &samples);
            if event.is_some() {
                log.detection = event;
                detector.disarm();
            }
        }
        let next = supervisor_step(&mode, t, event, variant, reference.t_r, dt_int);
        if next.mode != mode.mode {
            log.transitions.push((t, next.mode));
            // The time-switched baseline ignores detections, so its detector
            // keeps running and only logs.
            if variant != Variant::NoRs {
                detector.disarm();
            }
        }
        mode = next;
        let inputs: Vec<ArmInput<'_>> = plant.arms.iter().zip(&m.states).zip(&m.snaps).map(|((model, state), snap)| ArmInput { model, state, snap }).collect();
        let out = control_step(&inputs, &mode, &cfg, reference, t, &mut solver);
        log.steps.push(record_step(t, &mode, &out, &m, &world, &plant.approach));
        step_world(&mut world, &out.tau, &mut log.first_contact)?;
        sensors.prev_tau = out.tau;
    }
    Ok(log)
}
