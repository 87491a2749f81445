//! Run manifests: everything needed to replay a command (resolved
//! settings, command-specific parameters, input and output paths, and
//! the tool version), plus the wall-clock duration for the record.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use xrf_restore::Result;

use crate::settings::Settings;

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub settings: Settings,
    /// Command-specific parameters not covered by `settings` (dwell,
    /// phantom shape, band definitions, ...).
    pub params: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub duration_s: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, settings: &Settings) -> Self {
        Self {
            tool: "xrf-restore".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            settings: settings.clone(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: settings.seed,
            duration_s: 0.0,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(
            key.into(),
            serde_json::to_value(value).expect("manifest params are plain data"),
        );
    }

    pub fn input(&mut self, label: &str, path: &Path) {
        self.inputs.insert(label.into(), path.display().to_string());
    }

    pub fn output(&mut self, label: &str, path: &Path) {
        self.outputs.insert(label.into(), path.display().to_string());
    }

    /// Write `manifest.json` into the output directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
