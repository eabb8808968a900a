//! Run directories. Every command writes its outputs into one directory
//! together with a `manifest.json` that lists the resolved configuration,
//! the files produced and a command-specific result summary.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use crate::config::Config;

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct Output {
    file: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    created_unix: u64,
    plant: String,
    config: &'a Config,
    outputs: Vec<Output>,
    results: &'a Value,
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    command: String,
    created: u64,
}

impl RunDir {
    /// Uses `explicit` as is, or creates `<root>/<command>-<unix time>`.
    pub fn create(explicit: Option<&Path>, root: &Path, command: &str) -> anyhow::Result<Self> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let stem = format!("{}-{created}", command.replace(' ', "-"));
                let mut path = root.join(&stem);
                let mut n = 1;
                while path.exists() {
                    n += 1;
                    path = root.join(format!("{stem}-{n}"));
                }
                path
            }
        };
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path, command: command.to_string(), created })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes the manifest, listing every file currently in the directory.
    pub fn write_manifest(&self, config: &Config, results: &Value) -> anyhow::Result<PathBuf> {
        let mut outputs = Vec::new();
        for entry in std::fs::read_dir(&self.path)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != MANIFEST && entry.file_type()?.is_file() {
                outputs.push(Output { file: name, bytes: entry.metadata()?.len() });
            }
        }
        outputs.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            schema_version: MANIFEST_VERSION,
            tool: "rspread",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            argv: std::env::args().collect(),
            created_unix: self.created,
            plant: config.plant.as_ref().map_or_else(|| "bundled".to_string(), |p| p.display().to_string()),
            config,
            outputs,
            results,
        };
        let path = self.file(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
