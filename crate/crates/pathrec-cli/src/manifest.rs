//! Stage manifest: every pipeline stage records the sha256 of the files it
//! read and wrote, so downstream stages can refuse to run on stale
//! artifacts and reruns can be checked for byte identity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct StageRecord {
    /// file name -> sha256 of inputs read from outside the output dir.
    pub inputs: BTreeMap<String, String>,
    /// file name -> sha256 of artifacts written into the output dir.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    /// Snapshot of the effective run configuration.
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join(MANIFEST_FILE)
    }

    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            version: 1,
            seed: config.seed,
            config: serde_json::to_value(config)?,
            stages: BTreeMap::new(),
        })
    }

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = Self::path(out_dir);
        let text = std::fs::read_to_string(&path).with_context(|| {
            format!(
                "no manifest at {} — run `pathrec build` first",
                path.display()
            )
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(Self::path(out_dir), text + "\n")?;
        Ok(())
    }

    /// Record a stage's inputs/outputs, hashing the named files.
    pub fn record_stage(
        &mut self,
        stage: &str,
        out_dir: &Path,
        inputs: &[(&str, &Path)],
        outputs: &[&str],
    ) -> Result<()> {
        let mut record = StageRecord::default();
        for (name, path) in inputs {
            record.inputs.insert(name.to_string(), sha256_file(path)?);
        }
        for name in outputs {
            record
                .outputs
                .insert(name.to_string(), sha256_file(&out_dir.join(name))?);
        }
        self.stages.insert(stage.to_string(), record);
        Ok(())
    }

    /// Check that an upstream stage ran and that its recorded artifacts
    /// still match the files on disk.
    pub fn verify_stage_outputs(&self, stage: &str, out_dir: &Path) -> Result<()> {
        let Some(record) = self.stages.get(stage) else {
            bail!("stage `{stage}` has not run — run `pathrec {stage}` first");
        };
        for (name, recorded) in &record.outputs {
            let path = out_dir.join(name);
            if !path.exists() {
                bail!(
                    "artifact `{name}` of stage `{stage}` is missing — rerun `pathrec {stage}`"
                );
            }
            let current = sha256_file(&path)?;
            if &current != recorded {
                bail!(
                    "artifact `{name}` is stale (hash changed since stage `{stage}` ran) — rerun `pathrec {stage}`"
                );
            }
        }
        Ok(())
    }
}
