use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lhs::{lhs_sample, DescriptorRanges};
use super::raster::{rasterize, RasterImage};
use super::rsa::{rsa_place, rsa_place_circles, with_reseed};
use super::{derive_seed, DescriptorPoint};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeKind {
    Fiber,
    Circle,
}

impl std::str::FromStr for CompositeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fiber" => Ok(Self::Fiber),
            "circle" => Ok(Self::Circle),
            other => Err(Error::invalid(format!("unknown composite kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CompositeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fiber => "fiber",
            Self::Circle => "circle",
        })
    }
}

/// One line of the JSON Lines manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub n_particles: u32,
    pub aspect_ratio: f64,
    pub volume_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1111_gpa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2222_gpa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1212_gpa: Option<f64>,
    pub split: String,
}

impl ManifestRecord {
    pub fn descriptor(&self) -> DescriptorPoint {
        DescriptorPoint {
            n_particles: self.n_particles,
            aspect_ratio: self.aspect_ratio,
            volume_fraction: self.volume_fraction,
        }
    }

    /// `(C1111, C2222, C1212)` in GPa when fully labeled.
    pub fn label(&self) -> Option<[f64; 3]> {
        Some([self.c1111_gpa?, self.c2222_gpa?, self.c1212_gpa?])
    }

    pub fn set_label(&mut self, label: [f64; 3]) {
        self.c1111_gpa = Some(label[0]);
        self.c2222_gpa = Some(label[1]);
        self.c1212_gpa = Some(label[2]);
    }
}

/// Records tying images to descriptors and stiffness labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that record paths are relative to.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            records,
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, rec: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&rec.path)
    }

    pub fn load_image(&self, rec: &ManifestRecord) -> Result<RasterImage> {
        RasterImage::read_pgm(&self.image_path(rec))
    }

    pub fn load_images(&self) -> Result<Vec<RasterImage>> {
        self.records.iter().map(|r| self.load_image(r)).collect()
    }

    pub fn labeled(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.label().is_some())
    }

    pub fn with_records(&self, records: Vec<ManifestRecord>) -> Self {
        Self::new(records, self.base_dir.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate manifest id `{}`", r.id)));
            }
            let partial = [r.c1111_gpa, r.c2222_gpa, r.c1212_gpa].iter().filter(|c| c.is_some()).count();
            if partial != 0 && partial != 3 {
                return Err(Error::invalid(format!("record `{}` carries a partial label", r.id)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_jsonl()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest; record paths resolve against the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::new(records, base);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub ranges: DescriptorRanges,
    /// Fixed circle radius as a fraction of the domain edge.
    pub circle_radius: f64,
    /// Placement attempts per particle before a reseed.
    pub max_attempts: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            ranges: DescriptorRanges::default(),
            circle_radius: 0.04,
            max_attempts: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub manifest: DatasetManifest,
    /// Total reseeds used across records.
    pub reseeds: u32,
    /// Records whose placement kept failing after every reseed.
    pub failures: Vec<String>,
}

pub fn record_id(kind: CompositeKind, index: usize) -> String {
    format!("{kind}-{index:06}")
}

/// Generates `n` images plus `manifest.jsonl` under `out_dir`.
///
/// Each record uses a seed derived from `(seed, index)`, so the output does
/// not depend on generation order or thread count.
pub fn generate_dataset(
    kind: CompositeKind,
    n: usize,
    resolution: usize,
    seed: u64,
    cfg: &GenConfig,
    out_dir: &Path,
) -> Result<GenerationOutput> {
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let descriptors: Vec<DescriptorPoint> = match kind {
        CompositeKind::Fiber if n == 0 => Vec::new(),
        CompositeKind::Fiber => lhs_sample(n, &cfg.ranges, seed)?,
        CompositeKind::Circle => (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC1C1_0000_0000 + i as u64));
                let vf = cfg.ranges.volume_fraction;
                let v = vf.lo + rng.random::<f64>() * vf.width();
                DescriptorPoint {
                    n_particles: super::rsa::circle_count(v, cfg.circle_radius),
                    aspect_ratio: 1.0,
                    volume_fraction: v,
                }
            })
            .collect(),
    };

    let results: Vec<Result<(ManifestRecord, u32)>> = descriptors
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let record_seed = derive_seed(seed, i as u64);
            let (rve, reseeds) = with_reseed(record_seed, |s| match kind {
                CompositeKind::Fiber => rsa_place(d, s, cfg.max_attempts),
                CompositeKind::Circle => rsa_place_circles(d.volume_fraction, cfg.circle_radius, s, cfg.max_attempts),
            })?;
            let img = rasterize(&rve, resolution)?;
            let id = record_id(kind, i);
            let rel = format!("images/{id}.pgm");
            img.write_pgm(&out_dir.join(&rel))?;
            Ok((
                ManifestRecord {
                    id,
                    path: rel,
                    n_particles: d.n_particles,
                    aspect_ratio: d.aspect_ratio,
                    volume_fraction: d.volume_fraction,
                    c1111_gpa: None,
                    c2222_gpa: None,
                    c1212_gpa: None,
                    split: "unsplit".into(),
                },
                reseeds,
            ))
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    let mut reseeds = 0;
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((rec, k)) => {
                reseeds += k;
                records.push(rec);
            }
            Err(Error::Placement { descriptor, attempts }) => {
                log::warn!("record {i}: placement failed for {descriptor:?} after {attempts} attempts");
                failures.push(record_id(kind, i));
            }
            Err(e) => return Err(e),
        }
    }
    let manifest = DatasetManifest::new(records, out_dir);
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(GenerationOutput {
        manifest,
        reseeds,
        failures,
    })
}
