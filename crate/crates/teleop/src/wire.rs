//! JSON messages exchanged over the WebSocket. Every message is an object
//! with a `type` discriminator.
//!
//! Handshake: on connect the server sends `hello` with its schema version,
//! control period and state rate. The client answers with
//! `{"type": "hello", "schema_version": 1}`. Until then every other client
//! message is answered with `error {code: "handshake_required"}`; a version
//! mismatch is answered with `error {code: "schema_version"}` and the socket
//! is closed.

use serde::{Deserialize, Serialize};

use rspread_core::control::{Mode, Variant};

pub const WIRE_SCHEMA_VERSION: u32 = 1;

/// Allowed deviation of a quaternion's norm from one.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello(Hello),
    State(StateMsg),
    Command(CommandMsg),
    Record { action: RecordAction },
    Replay { variant: Variant, displacement: f64 },
    Ack(Ack),
    Error { code: ErrorCode, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
    /// Control period (s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<usize>,
}

impl Hello {
    pub fn client() -> Self {
        Self { schema_version: WIRE_SCHEMA_VERSION, server: None, dt: None, state_rate_hz: None, arms: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub p: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub q: [f64; 4],
    /// Twist [v; ω] (m/s, rad/s).
    pub v: [f64; 6],
    /// Commanded reference position, live stream only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_d: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPose {
    pub p: [f64; 3],
    pub q: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub stream: Stream,
    pub t: f64,
    pub arms: Vec<ArmState>,
    #[serde(rename = "box")]
    pub box_pose: BoxPose,
    pub contact: Vec<bool>,
    pub tau_norm: f64,
    pub mode: Mode,
    pub gamma: f64,
    pub recording: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mirrored {
    #[serde(rename = "both-mirrored")]
    BothMirrored,
}

/// Which arm a command drives: an index, or `"both-mirrored"`, in which case
/// the target is for arm 0 and arm 1 gets its mirror image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArmSelector {
    Index(usize),
    Mirrored(Mirrored),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMsg {
    pub arm: ArmSelector,
    pub p: [f64; 3],
    pub q: [f64; 4],
    #[serde(default)]
    pub v_d: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckKind {
    Hello,
    RecordStart,
    RecordStop,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AckDetail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_imp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_norm_avg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub of: AckKind,
    #[serde(flatten)]
    pub detail: AckDetail,
}

impl Ack {
    pub fn new(of: AckKind) -> Self {
        Self { of, detail: AckDetail::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    Invalid,
    HandshakeRequired,
    SchemaVersion,
    Busy,
    NotRecording,
    NoReference,
    ReplayFailed,
    Internal,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn to_message(&self) -> WireMessage {
        WireMessage::Error { code: self.code, message: self.message.clone() }
    }
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

fn unit(q: &[f64; 4]) -> bool {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n - 1.0).abs() <= QUATERNION_TOLERANCE
}

impl WireMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    /// Checks value ranges that the JSON schema alone cannot express.
    pub fn validate(&self) -> Result<(), WireError> {
        let bad = |m: &str| Err(WireError::new(ErrorCode::Invalid, m));
        match self {
            WireMessage::Command(c) => {
                if !finite(&c.p) || !finite(&c.q) || !finite(&c.v_d) {
                    return bad("command values must be finite");
                }
                if !unit(&c.q) {
                    return bad("command quaternion must have unit norm");
                }
            }
            WireMessage::Replay { displacement, .. } if !displacement.is_finite() => return bad("displacement must be finite"),
            WireMessage::State(s) if !s.t.is_finite() || s.arms.iter().any(|a| !unit(&a.q)) || !unit(&s.box_pose.q) => {
                return bad("state must carry finite time and unit quaternions");
            }
            _ => {}
        }
        Ok(())
    }

    /// Parses a message received from a client. Only `hello`, `command`,
    /// `record` and `replay` are accepted.
    pub fn parse_client(text: &str) -> Result<Self, WireError> {
        let msg: WireMessage = serde_json::from_str(text).map_err(|e| WireError::new(ErrorCode::Malformed, e.to_string()))?;
        match msg {
            WireMessage::Hello(_) | WireMessage::Command(_) | WireMessage::Record { .. } | WireMessage::Replay { .. } => {}
            _ => return Err(WireError::new(ErrorCode::Invalid, "clients may only send hello, command, record and replay")),
        }
        msg.validate()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn state() -> StateMsg {
        StateMsg {
            stream: Stream::Live,
            t: 0.25,
            arms: vec![ArmState { p: [0.0, -0.3, 0.35], q: [1.0, 0.0, 0.0, 0.0], v: [0.0; 6], p_d: Some([0.0, -0.3, 0.35]) }],
            box_pose: BoxPose { p: [0.0, 0.0, 0.35], q: [1.0, 0.0, 0.0, 0.0] },
            contact: vec![false],
            tau_norm: 42.0,
            mode: Mode::Recording,
            gamma: 0.0,
            recording: true,
        }
    }

    #[test]
    fn messages_round_trip() {
        let all = vec![
            WireMessage::Hello(Hello::client()),
            WireMessage::State(state()),
            WireMessage::Command(CommandMsg { arm: ArmSelector::Index(1), p: [0.1, 0.2, 0.3], q: [0.0, 1.0, 0.0, 0.0], v_d: [0.5; 6] }),
            WireMessage::Command(CommandMsg { arm: ArmSelector::Mirrored(Mirrored::BothMirrored), p: [0.1, 0.2, 0.3], q: [1.0, 0.0, 0.0, 0.0], v_d: [0.0; 6] }),
            WireMessage::Record { action: RecordAction::Stop },
            WireMessage::Replay { variant: Variant::NoInterim, displacement: -0.03 },
            WireMessage::Ack(Ack { of: AckKind::RecordStop, detail: AckDetail { samples: Some(12), t_r: Some(1.5), ..Default::default() } }),
            WireMessage::Error { code: ErrorCode::Busy, message: "recording".into() },
        ];
        for m in all {
            let back: WireMessage = serde_json::from_str(&m.to_json()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn wire_names() {
        let v: serde_json::Value = serde_json::from_str(&WireMessage::State(state()).to_json()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["stream"], "live");
        assert_eq!(v["mode"], "recording");
        assert!(v["box"]["p"].is_array());
        let ack = WireMessage::Ack(Ack { of: AckKind::RecordStart, detail: AckDetail::default() });
        assert_eq!(ack.to_json(), r#"{"type":"ack","of":"record_start"}"#);
        let replay = WireMessage::parse_client(r#"{"type":"replay","variant":"no-rs","displacement":0.03}"#).unwrap();
        assert_eq!(replay, WireMessage::Replay { variant: Variant::NoRs, displacement: 0.03 });
    }

    #[test]
    fn mirrored_and_indexed_commands_parse() {
        let m = WireMessage::parse_client(&json!({"type": "command", "arm": "both-mirrored", "p": [0, -0.3, 0.4], "q": [1, 0, 0, 0]}).to_string()).unwrap();
        let WireMessage::Command(c) = m else { panic!("not a command") };
        assert_eq!(c.arm, ArmSelector::Mirrored(Mirrored::BothMirrored));
        assert_eq!(c.v_d, [0.0; 6]);
        let m =
            WireMessage::parse_client(&json!({"type": "command", "arm": 1, "p": [0, 0.3, 0.4], "q": [1, 0, 0, 0], "v_d": [0, 0.1, 0, 0, 0, 0]}).to_string());
        assert!(matches!(m, Ok(WireMessage::Command(CommandMsg { arm: ArmSelector::Index(1), .. }))));
    }

    #[test]
    fn bad_input_is_classified() {
        let code = |t: &str| WireMessage::parse_client(t).unwrap_err().code;
        assert_eq!(code("not json"), ErrorCode::Malformed);
        assert_eq!(code(r#"{"type":"teleport"}"#), ErrorCode::Malformed);
        assert_eq!(code(r#"{"type":"command","arm":"left","p":[0,0,0],"q":[1,0,0,0]}"#), ErrorCode::Malformed);
        assert_eq!(code(r#"{"type":"command","arm":0,"p":[0,0,0],"q":[1,0,0,0.01]}"#), ErrorCode::Invalid);
        assert_eq!(code(r#"{"type":"ack","of":"hello"}"#), ErrorCode::Invalid);
        assert_eq!(code(r#"{"type":"record","action":"pause"}"#), ErrorCode::Malformed);
        // Within tolerance.
        assert!(WireMessage::parse_client(r#"{"type":"command","arm":0,"p":[0,0,0],"q":[1.0000005,0,0,0]}"#).is_ok());
    }
}
