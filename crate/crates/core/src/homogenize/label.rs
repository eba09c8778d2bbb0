use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{effective_stiffness, Material, PhaseMap, SolverConfig};
use crate::error::Result;
use crate::microgen::DatasetManifest;

/// Appended to the manifest file name for the labeling metadata sidecar.
pub const LABEL_META_SUFFIX: &str = ".labels.json";

/// Settings used to produce a manifest's labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelMeta {
    pub solver: SolverConfig,
    pub matrix: Material,
    pub inclusion: Material,
    /// Solve grid edge; `None` keeps each image's own resolution.
    pub resolution: Option<usize>,
}

impl Default for LabelMeta {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            matrix: Material::MATRIX,
            inclusion: Material::INCLUSION,
            resolution: None,
        }
    }
}

impl LabelMeta {
    pub fn sidecar_path(manifest_path: &Path) -> PathBuf {
        let mut name = manifest_path.file_name().unwrap_or_default().to_os_string();
        name.push(LABEL_META_SUFFIX);
        manifest_path.with_file_name(name)
    }

    pub fn write_beside(&self, manifest_path: &Path) -> Result<()> {
        std::fs::write(Self::sidecar_path(manifest_path), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_beside(manifest_path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(manifest_path))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct LabelOutput {
    pub manifest: DatasetManifest,
    /// `(id, error message)` for every record that could not be labeled.
    pub failures: Vec<(String, String)>,
}

/// Labels every record with its homogenized `(C1111, C2222, C1212)`.
///
/// Records that fail keep their previous fields and are reported in
/// `failures`; the others are still labeled.
pub fn label_dataset(manifest: &DatasetManifest, meta: &LabelMeta) -> Result<LabelOutput> {
    meta.matrix.validate()?;
    meta.inclusion.validate()?;
    let results: Vec<Result<[f64; 3]>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let img = manifest.load_image(rec)?;
            let mut pm = PhaseMap::from_image(&img);
            if let Some(n) = meta.resolution {
                pm = pm.resampled(n);
            }
            let c = effective_stiffness(&pm, &meta.matrix, &meta.inclusion, &meta.solver)?;
            Ok(c.label())
        })
        .collect();
    let mut records = manifest.records.clone();
    let mut failures = Vec::new();
    for (rec, res) in records.iter_mut().zip(results) {
        match res {
            Ok(label) => rec.set_label(label),
            Err(e) => {
                log::warn!("labeling {} failed: {e}", rec.id);
                failures.push((rec.id.clone(), e.to_string()));
            }
        }
    }
    Ok(LabelOutput {
        manifest: manifest.with_records(records),
        failures,
    })
}
