use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Written when a stage finishes; its presence makes later runs skip it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: String,
    pub seed: u64,
    pub wall_seconds: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Directory tree of one run, keyed by the configuration hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkspaceLayout {
    pub root: PathBuf,
}

impl WorkspaceLayout {
    pub fn new(output_root: &Path, config_hash: &str) -> Self {
        Self { root: output_root.join(config_hash) }
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.datasets().join(name)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn stamps(&self) -> PathBuf {
        self.root.join("stamps")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.datasets(), self.checkpoints(), self.reports(), self.figures(), self.stamps()] {
            std::fs::create_dir_all(d)?;
        }
        Ok(())
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.stamps().join(format!("{stage}.json"))
    }

    pub fn stamp(&self, stage: &str) -> Option<StageStamp> {
        let text = std::fs::read_to_string(self.stamp_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write_stamp(&self, stage: &str, seed: u64, wall: Duration, notes: Vec<String>) -> Result<StageStamp> {
        let s = StageStamp { stage: stage.into(), seed, wall_seconds: wall.as_secs_f64(), notes };
        std::fs::write(self.stamp_path(stage), serde_json::to_string_pretty(&s)?)?;
        Ok(s)
    }

    pub fn clear_stamp(&self, stage: &str) -> Result<()> {
        match std::fs::remove_file(self.stamp_path(stage)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }
}
