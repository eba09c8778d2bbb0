use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::homogenize::LabelMeta;
use crate::microgen::GenConfig;
use crate::mmae::{MmaeConfig, PretrainConfig};
use crate::transfer::{ProbeConfig, ProbeMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub resolution: usize,
    /// Unlabeled short-fiber images for pre-training.
    pub pretrain_images: usize,
    /// Short-fiber images generated and labeled for transfer.
    pub labeled_fiber: usize,
    /// Circular-inclusion images generated and labeled for transfer.
    pub labeled_circle: usize,
    pub params: GenConfig,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self { resolution: 64, pretrain_images: 2000, labeled_fiber: 2000, labeled_circle: 500, params: GenConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// One checkpoint is pre-trained per ratio.
    pub mask_ratios: Vec<f64>,
    pub schedule: PretrainConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { mask_ratios: vec![0.85], schedule: PretrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub settings: ProbeConfig,
    /// Labeled short-fiber records used by the masking-ratio and blocks sweeps.
    pub pool: usize,
    /// Checkpoint (by masking ratio) used by the blocks, size and composite experiments.
    pub reference_ratio: f64,
    pub mask_ratio_modes: Vec<ProbeMode>,
    /// `None` skips the blocks sweep; empty means every `k` in `0..=depth`.
    pub blocks: Option<Vec<usize>>,
    pub sizes: Vec<usize>,
    pub size_mode: ProbeMode,
    /// Linear probes on circular-inclusion and short-fiber labels.
    pub composite_probe: bool,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            settings: ProbeConfig::default(),
            pool: 1000,
            reference_ratio: 0.85,
            mask_ratio_modes: vec![ProbeMode::Linear, ProbeMode::Full],
            blocks: Some(Vec::new()),
            sizes: vec![100, 500, 2000],
            size_mode: ProbeMode::Linear,
            composite_probe: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencySection {
    /// Validation images explained per component; 0 disables the stage.
    pub images: usize,
    /// Transfer mode of the explained model.
    pub mode: ProbeMode,
    pub target_space: crate::saliency::TargetSpace,
    /// Reconstruction triptychs written per checkpoint.
    pub triptychs: usize,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self { images: 4, mode: ProbeMode::Linear, target_space: Default::default(), triptychs: 4 }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub generation: GenerationSection,
    pub solver: LabelMeta,
    pub model: MmaeConfig,
    pub training: TrainingSection,
    pub transfer: TransferSection,
    pub saliency: SaliencySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_root: PathBuf::from("runs"),
            generation: GenerationSection::default(),
            solver: LabelMeta::default(),
            model: MmaeConfig::desk(),
            training: TrainingSection::default(),
            transfer: TransferSection::default(),
            saliency: SaliencySection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.schedule.validate()?;
        self.solver.matrix.validate()?;
        self.solver.inclusion.validate()?;
        if self.generation.resolution != self.model.image_size {
            return Err(Error::Config(format!(
                "generation resolution {} differs from model image size {}",
                self.generation.resolution, self.model.image_size
            )));
        }
        if self.training.mask_ratios.is_empty() {
            return Err(Error::Config("at least one masking ratio is required".into()));
        }
        for &r in &self.training.mask_ratios {
            MmaeConfig { mask_ratio: r, ..self.model }.validate()?;
        }
        Ok(())
    }

    /// Canonical JSON: keys sorted, no whitespace, output root omitted since it
    /// does not change any result.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("output_root");
        }
        Ok(serde_json::to_string(&v)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(hex::encode(digest)[..16].to_string())
    }
}
