//! Provenance record written as `run.json` next to each command's outputs:
//! the resolved configuration, seed, content hashes of every input file, and
//! wall time, so identical inputs are checkable against identical outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use atlas_core::{io, Result};

pub struct RunRecord {
    started: Instant,
    command: &'static str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
}

#[derive(serde::Serialize)]
struct RecordFile<'a> {
    command: &'a str,
    config: &'a serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Input path -> SHA-256 of its contents.
    inputs: &'a BTreeMap<String, String>,
    wall_time_seconds: f64,
}

impl RunRecord {
    pub fn start(command: &'static str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunRecord { started: Instant::now(), command, config, seed, inputs: BTreeMap::new() }
    }

    /// Hashes one input file.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), io::sha256_hex(path)?);
        Ok(())
    }

    /// Hashes a manifest and every volume/mask/label file it references.
    pub fn add_manifest_inputs(&mut self, manifest: &Path) -> Result<()> {
        self.add_input(manifest)?;
        let base = manifest.parent().unwrap_or_else(|| Path::new("."));
        for entry in io::read_manifest(manifest)? {
            self.add_input(&base.join(&entry.volume_path))?;
            self.add_input(&base.join(&entry.mask_path))?;
            if let Some(lp) = &entry.label_path {
                self.add_input(&base.join(lp))?;
            }
        }
        Ok(())
    }

    /// Hashes every regular file directly inside a directory (model
    /// checkpoints), in name order.
    pub fn add_dir_inputs(&mut self, dir: &Path) -> Result<()> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for p in paths {
            self.add_input(&p)?;
        }
        Ok(())
    }

    /// Serializes the record into `dir/run.json`.
    pub fn write(self, dir: &Path) -> Result<()> {
        let record = RecordFile {
            command: self.command,
            config: &self.config,
            seed: self.seed,
            inputs: &self.inputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        std::fs::write(dir.join("run.json"), text)?;
        Ok(())
    }
}
