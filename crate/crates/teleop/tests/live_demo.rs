use rspread_core::control::Variant;
use rspread_core::liegroup::to_quaternion;
use rspread_core::reference::{deserialize_reference, extend, extract_nominal_impact_time, serialize_recording};
use rspread_harness::{run_demonstration, Scenario};
use rspread_teleop::wire::{ArmSelector, CommandMsg, StateMsg, Stream};
use rspread_teleop::{LiveConfig, LiveSim, SessionStatus};

fn header(text: &str) -> Vec<&str> {
    text.lines().take_while(|l| *l != "data").collect()
}

#[test]
fn driven_demonstration_matches_the_scripted_one() {
    let scenario = Scenario::default_scenario();
    let scripted = run_demonstration(&scenario).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = LiveConfig { output_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let mut live = LiveSim::new(scenario.clone(), config);
    let op = scenario.config.operator;
    let dt = scenario.dt();

    live.record_start(1).unwrap();
    let steps = (scenario.demonstration_time() / dt).round() as usize;
    let mut frames = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        for (i, plan) in scenario.plans.iter().enumerate() {
            let tg = op.target(plan, t);
            let cmd = CommandMsg {
                arm: ArmSelector::Index(i),
                p: [tg.p_d.x, tg.p_d.y, tg.p_d.z],
                q: to_quaternion(&tg.r_d),
                v_d: std::array::from_fn(|j| tg.v_d[j]),
            };
            live.apply_command(&cmd).unwrap();
        }
        if live.tick().unwrap().is_some() {
            frames += 1;
        }
    }
    assert_eq!(frames, steps / 20);
    let ack = live.record_stop().unwrap();
    assert_eq!(ack.detail.samples, Some(scripted.recording.len()));
    assert!(ack.detail.warning.is_none(), "{:?}", ack.detail.warning);

    let rec = live.last_recording().unwrap();
    let (a, b) = (serialize_recording(rec), serialize_recording(&scripted.recording));
    assert_eq!(header(&a), header(&b));
    let t_r = extract_nominal_impact_time(rec, &scenario.config.detector).unwrap();
    let t_scripted = extract_nominal_impact_time(&scripted.recording, &scenario.config.detector).unwrap();
    assert!((t_r - t_scripted).abs() <= 2.0 * dt, "{t_r} vs {t_scripted}");
    assert_eq!(ack.detail.t_r, Some(t_r));
    extend(rec, t_r, scenario.config.params.delta_t_r).unwrap();

    let saved = std::fs::read_to_string(ack.detail.reference_file.as_deref().unwrap()).unwrap();
    assert_eq!(&deserialize_reference(&saved).unwrap(), live.reference().unwrap());
    assert!(std::path::Path::new(ack.detail.recording_file.as_deref().unwrap()).exists());

    let replay = live.replay(Variant::Proposed, 0.02).unwrap();
    assert!(replay.detail.t_imp.is_some() && replay.detail.tau_norm_avg.is_some());
    assert_eq!(live.status(), SessionStatus::Replaying);
    let frames: Vec<StateMsg> = std::iter::from_fn(|| live.next_replay_frame()).collect();
    assert!(frames.len() > 10);
    assert!(frames.iter().all(|f| f.stream == Stream::Replay && !f.recording));
    assert!(frames.windows(2).all(|w| (w[1].t - w[0].t - 20.0 * dt).abs() < 1e-9));
    assert_eq!(live.status(), SessionStatus::Idle);
}
