//! The run manifest: what produced a run directory and what is in it.
//!
//! Every stage appends (or, on `--overwrite`, replaces) one record listing
//! the files it read and wrote with their SHA-256 digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub arm: Option<String>,
    pub wall_clock_secs: f64,
    /// Paths relative to the run directory, mapped to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    /// The `ULTR_LAB_THREADS` value in effect, or 1.
    pub threads: usize,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, threads: usize) -> Self {
        RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            config: config.clone(),
            stages: Vec::new(),
        }
    }

    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    pub fn load(run_dir: &Path) -> CliResult<Self> {
        let path = Self::path(run_dir);
        if !path.is_file() {
            return Err(CliError::Validation(format!(
                "missing {}; run `ultr-lab simulate` first",
                path.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, run_dir: &Path) -> CliResult<()> {
        let path = Self::path(run_dir);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Replaces an earlier record of the same stage and arm, or appends.
    pub fn record(&mut self, rec: StageRecord) {
        match self
            .stages
            .iter_mut()
            .find(|s| s.stage == rec.stage && s.arm == rec.arm)
        {
            Some(slot) => *slot = rec,
            None => self.stages.push(rec),
        }
    }

    pub fn stage(&self, stage: &str, arm: Option<&str>) -> Option<&StageRecord> {
        self.stages
            .iter()
            .find(|s| s.stage == stage && s.arm.as_deref() == arm)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Collects the files one stage touches, then hashes them into a record.
#[derive(Debug)]
pub struct StageLog {
    stage: String,
    arm: Option<String>,
    started: Instant,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl StageLog {
    pub fn start(stage: &str, arm: Option<&str>) -> Self {
        StageLog {
            stage: stage.to_string(),
            arm: arm.map(str::to_string),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, rel: &str) {
        if !self.inputs.iter().any(|p| p == rel) {
            self.inputs.push(rel.to_string());
        }
    }

    pub fn output(&mut self, rel: &str) {
        if !self.outputs.iter().any(|p| p == rel) {
            self.outputs.push(rel.to_string());
        }
    }

    pub fn finish(self, run_dir: &Path) -> CliResult<StageRecord> {
        let hash_all = |paths: &[String]| -> CliResult<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.clone(), sha256_file(&run_dir.join(p))?)))
                .collect()
        };
        Ok(StageRecord {
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            stage: self.stage,
            arm: self.arm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn rerun_replaces_record() {
        let mut m = RunManifest::new(&ExperimentConfig::default(), 1);
        for secs in [1.0, 2.0] {
            m.record(StageRecord {
                stage: "train".into(),
                arm: Some("naive".into()),
                wall_clock_secs: secs,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            });
        }
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stage("train", Some("naive")).unwrap().wall_clock_secs, 2.0);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(&ExperimentConfig::default(), 3);
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
    }
}
