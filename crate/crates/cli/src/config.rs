//! Optional TOML configuration file. Every table and key may be omitted.
//!
//! ```toml
//! plant = "plant.toml"      # relative to this file; bundled plant if absent
//!
//! [scenario.operator]
//! approach_speed = 0.9
//!
//! [sweep]
//! runs = 5
//! variants = ["proposed", "no-rs", "no-interim"]
//! displacements = [-0.03, 0.0, 0.03]
//!
//! [live]
//! decimation = 20
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use rspread_core::plant::Plant;
use rspread_harness::{Scenario, ScenarioConfig, SweepConfig};
use rspread_teleop::LiveConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub sweep: SweepConfig,
    pub live: LiveConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`; a relative plant path is taken relative to the file.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let (Some(p), Some(dir)) = (&config.plant, path.parent()) {
            if p.is_relative() {
                config.plant = Some(dir.join(p));
            }
        }
        Ok(config)
    }

    pub fn plant(&self) -> anyhow::Result<Plant> {
        match &self.plant {
            Some(p) => Plant::load(p).with_context(|| format!("loading plant {}", p.display())),
            None => Ok(Plant::default_plant()),
        }
    }

    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        Ok(Scenario::new(self.plant()?, self.scenario.clone())?)
    }
}
