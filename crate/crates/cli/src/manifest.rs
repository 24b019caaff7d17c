//! Run manifests: everything needed to repeat an artifact-producing command.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::run_config::RunConfig;
use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Resolved config written next to the manifest; `train --config` accepts it.
pub const RESOLVED_CONFIG_FILE: &str = "resolved.cfg";

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: Option<RunConfig>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub extra: Vec<(String, Value)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            seed: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Vec::new(),
        }
    }

    fn to_json(&self) -> Result<Value, Failure> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? })))
            .collect::<Result<Vec<_>, Failure>>()?;
        let mut v = json!({
            "tool": "mlsn",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "config": self.config.as_ref().map(|c| c.entries()),
            "inputs": inputs,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        for (k, x) in &self.extra {
            v[k] = x.clone();
        }
        Ok(v)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(&self.to_json()?).expect("json");
        write_file(path, &(text + "\n"))
    }

    /// Writes `manifest.json` (and `resolved.cfg` when a config is present)
    /// into `dir`, creating it first.
    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        self.write_json(&dir.join(MANIFEST_FILE))?;
        if let Some(c) = &self.config {
            write_file(&dir.join(RESOLVED_CONFIG_FILE), &c.to_config_string())?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}
