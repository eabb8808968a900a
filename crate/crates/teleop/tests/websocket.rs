use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use rspread_harness::Scenario;
use rspread_teleop::{LiveConfig, LiveSim, Pacing, Server, SessionStatus, SimHandle, TeleopError};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(20);

async fn server(pacing: Pacing) -> Server {
    let sim = LiveSim::new(Scenario::default_scenario(), LiveConfig::default());
    Server::start(SimHandle::spawn(sim, pacing), SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap()
}

async fn connect(s: &Server) -> Ws {
    let (ws, _) = connect_async(format!("ws://{}/ws", s.local_addr)).await.unwrap();
    ws
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> Value {
    loop {
        let m = tokio::time::timeout(WAIT, ws.next()).await.expect("server went quiet").expect("socket open").unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

/// Next message that is not a state frame.
async fn reply(ws: &mut Ws) -> Value {
    loop {
        let v = recv(ws).await;
        if v["type"] != "state" {
            return v;
        }
    }
}

async fn state(ws: &mut Ws) -> Value {
    loop {
        let v = recv(ws).await;
        if v["type"] == "state" {
            return v;
        }
    }
}

async fn handshake(ws: &mut Ws) -> Value {
    let hello = recv(ws).await;
    assert_eq!(hello["type"], "hello");
    send(ws, json!({"type": "hello", "schema_version": 1})).await;
    hello
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn handshake_then_state_stream() {
    let s = server(Pacing::Fast).await;
    let mut ws = connect(&s).await;
    let hello = recv(&mut ws).await;
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["schema_version"], 1);
    assert_eq!(hello["arms"], 2);
    assert!((hello["state_rate_hz"].as_f64().unwrap() - 50.0).abs() < 1e-9);

    send(&mut ws, json!({"type": "record", "action": "start"})).await;
    assert_eq!(reply(&mut ws).await["code"], "handshake_required");

    send(&mut ws, json!({"type": "hello", "schema_version": 1})).await;
    let a = state(&mut ws).await;
    let b = state(&mut ws).await;
    assert_eq!(a["stream"], "live");
    assert_eq!(a["arms"].as_array().unwrap().len(), 2);
    assert!(b["t"].as_f64().unwrap() > a["t"].as_f64().unwrap());
    drop(ws);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn wrong_schema_version_closes_the_socket() {
    let s = server(Pacing::Fast).await;
    let mut ws = connect(&s).await;
    recv(&mut ws).await;
    send(&mut ws, json!({"type": "hello", "schema_version": 99})).await;
    assert_eq!(reply(&mut ws).await["code"], "schema_version");
    let end = tokio::time::timeout(WAIT, async {
        loop {
            match ws.next().await {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                _ => {}
            }
        }
    })
    .await;
    assert!(end.is_ok());
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_get_errors_and_the_session_continues() {
    let s = server(Pacing::Fast).await;
    let mut ws = connect(&s).await;
    handshake(&mut ws).await;
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert_eq!(reply(&mut ws).await["code"], "malformed");
    ws.send(Message::Binary(vec![1u8, 2, 3].into())).await.unwrap();
    assert_eq!(reply(&mut ws).await["code"], "malformed");
    send(&mut ws, json!({"type": "command", "arm": 0, "p": [0, 0, 0], "q": [0.5, 0, 0, 0]})).await;
    assert_eq!(reply(&mut ws).await["code"], "invalid");
    send(&mut ws, json!({"type": "command", "arm": 4, "p": [0, 0, 0], "q": [1, 0, 0, 0]})).await;
    assert_eq!(reply(&mut ws).await["code"], "invalid");
    send(&mut ws, json!({"type": "replay", "variant": "proposed", "displacement": 0.0})).await;
    assert_eq!(reply(&mut ws).await["code"], "no_reference");
    send(&mut ws, json!({"type": "record", "action": "stop"})).await;
    assert_eq!(reply(&mut ws).await["code"], "not_recording");
    assert_eq!(state(&mut ws).await["type"], "state");
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn dropped_recording_client_leaves_a_partial_recording() {
    let s = server(Pacing::Fast).await;
    let mut ws = connect(&s).await;
    handshake(&mut ws).await;
    send(&mut ws, json!({"type": "record", "action": "start"})).await;
    let ack = reply(&mut ws).await;
    assert_eq!(ack, json!({"type": "ack", "of": "record_start"}));
    loop {
        if state(&mut ws).await["recording"] == true {
            break;
        }
    }

    let mut other = connect(&s).await;
    handshake(&mut other).await;
    send(&mut other, json!({"type": "replay", "variant": "proposed", "displacement": 0.0})).await;
    assert_eq!(reply(&mut other).await["code"], "busy");
    send(&mut other, json!({"type": "record", "action": "start"})).await;
    assert_eq!(reply(&mut other).await["code"], "busy");

    drop(ws);
    // The remaining client sees the stop acknowledgement broadcast.
    let stop = reply(&mut other).await;
    assert_eq!(stop["of"], "record_stop");
    assert!(stop["samples"].as_u64().unwrap() > 0);
    assert_eq!(s.handle.status().await, Some(SessionStatus::Idle));
    let samples = s.handle.inspect(|l| l.last_recording().map(|r| r.len())).await.flatten();
    assert_eq!(samples, stop["samples"].as_u64().map(|n| n as usize));
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn port_in_use_is_reported() {
    let s = server(Pacing::Fast).await;
    let sim = LiveSim::new(Scenario::default_scenario(), LiveConfig::default());
    let err = Server::start(SimHandle::spawn(sim, Pacing::Fast), s.local_addr).await.err().unwrap();
    assert!(matches!(err, TeleopError::PortInUse(a) if a == s.local_addr), "{err}");
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn streamed_commands_are_tracked() {
    let s = server(Pacing::RealTime).await;
    let mut ws = connect(&s).await;
    handshake(&mut ws).await;
    let first = state(&mut ws).await;
    let p0: Vec<f64> = first["arms"][0]["p_d"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let q0 = s.handle.inspect(|l| rspread_core::liegroup::to_quaternion(&l.targets()[0].r_d)).await.unwrap();

    // 10 cm upwards in 2 s as a 20 Hz command stream, then hold for 1 s.
    let (rate, duration, rise) = (20.0, 2.0, 0.1);
    let ticks = (rate * duration) as usize;
    let mut worst = 0.0f64;
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
    for k in 0..=ticks + 20 {
        interval.tick().await;
        let z = rise * (k.min(ticks) as f64 / ticks as f64);
        let vz = if k < ticks { rise / duration } else { 0.0 };
        send(&mut ws, json!({"type": "command", "arm": 0, "p": [p0[0], p0[1], p0[2] + z], "q": q0, "v_d": [0, 0, vz, 0, 0, 0]})).await;
        // Drain what arrived since the last command.
        while let Ok(Some(Ok(Message::Text(t)))) = tokio::time::timeout(Duration::from_millis(1), ws.next()).await {
            let v: Value = serde_json::from_str(t.as_str()).unwrap();
            if v["type"] == "state" {
                let e = (v["arms"][0]["p"][2].as_f64().unwrap() - v["arms"][0]["p_d"][2].as_f64().unwrap()).abs();
                worst = worst.max(e);
            }
        }
    }
    let last = state(&mut ws).await;
    let z = last["arms"][0]["p"][2].as_f64().unwrap();
    assert!((z - (p0[2] + rise)).abs() < 5e-3, "final height {z} vs {}", p0[2] + rise);
    // Speed is 5 cm/s, so 20 mm is several command periods of lag.
    assert!(worst < 0.02, "tracking error {worst}");
    s.stop().await;
}
