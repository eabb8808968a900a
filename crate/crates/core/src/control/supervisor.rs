use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::DetectionEvent;

/// Slack for comparing control-grid times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Recording,
    Ante,
    Interim,
    Post,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Recording => "recording",
            Mode::Ante => "ante",
            Mode::Interim => "interim",
            Mode::Post => "post",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "proposed")]
    Proposed,
    #[serde(rename = "no-rs")]
    NoRs,
    #[serde(rename = "no-interim")]
    NoInterim,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Proposed, Variant::NoRs, Variant::NoInterim];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::NoRs => "no-rs",
            Variant::NoInterim => "no-interim",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "proposed" | "rs" => Ok(Variant::Proposed),
            "no-rs" | "nors" => Ok(Variant::NoRs),
            "no-interim" | "nointerim" => Ok(Variant::NoInterim),
            other => Err(format!("unknown variant `{other}` (expected proposed, no-rs or no-interim)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub mode: Mode,
    pub t_imp: Option<f64>,
    /// Blending parameter, meaningful in the interim mode only.
    pub gamma: f64,
}

impl ModeState {
    pub fn ante() -> Self {
        Self { mode: Mode::Ante, t_imp: None, gamma: 0.0 }
    }

    pub fn recording() -> Self {
        Self { mode: Mode::Recording, t_imp: None, gamma: 0.0 }
    }
}

/// Advances the supervisor to time `t`. `t_r` is the nominal impact time and
/// `delta_t_int` the interim duration.
pub fn supervisor_step(state: &ModeState, t: f64, event: Option<DetectionEvent>, variant: Variant, t_r: f64, delta_t_int: f64) -> ModeState {
    let mut next = *state;
    match (state.mode, variant) {
        (Mode::Recording, _) | (Mode::Post, _) => {}
        (Mode::Ante, Variant::NoRs) => {
            if t >= t_r - TIME_EPS {
                next.mode = Mode::Post;
            }
        }
        (Mode::Ante, Variant::NoInterim) => {
            if let Some(e) = event {
                next.mode = Mode::Post;
                next.t_imp = Some(e.time);
            }
        }
        (Mode::Ante, Variant::Proposed) => {
            if let Some(e) = event {
                next.mode = Mode::Interim;
                next.t_imp = Some(e.time);
                next.gamma = ((t - e.time) / delta_t_int).clamp(0.0, 1.0);
            }
        }
        (Mode::Interim, _) => {
            let t_imp = state.t_imp.unwrap_or(t);
            if t >= t_imp + delta_t_int - TIME_EPS {
                next.mode = Mode::Post;
                next.gamma = 1.0;
            } else {
                next.gamma = ((t - t_imp) / delta_t_int).clamp(0.0, 1.0);
            }
        }
    }
    if next.mode != Mode::Interim && next.mode != Mode::Post {
        next.gamma = 0.0;
    }
    next
}
