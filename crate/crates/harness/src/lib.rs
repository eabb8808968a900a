//! Simulation harness for the dual-arm grasp: scripted demonstrations,
//! autonomous episodes under the three supervisor variants, metrics and the
//! box-displacement sweep.

pub mod episode;
pub mod ik;
pub mod metrics;
pub mod operator;
pub mod plot;
pub mod scenario;
pub mod sweep;
pub mod world;

use thiserror::Error;

pub use episode::{demonstrate, reference_from, run_demonstration, run_episode, Demonstration, EpisodeLog, EpisodeMeta, RecordingSim, StepRecord};
pub use scenario::{NoiseModel, Scenario, ScenarioConfig};
pub use sweep::{run_sweep, write_sweep, SweepConfig, SweepResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("demonstration failed: {0}")]
    DemonstrationFailed(String),
    #[error("simulation diverged: {0}")]
    SimDiverged(String),
    #[error("log does not cover the window [{start:.4}, {end:.4}] s")]
    WindowNotCovered { start: f64, end: f64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Reference(#[from] rspread_core::reference::ReferenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
