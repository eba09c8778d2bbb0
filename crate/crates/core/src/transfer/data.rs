use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::microgen::DatasetManifest;
use crate::mmae::{patchify, MmaeConfig};

pub const COMPONENT_NAMES: [&str; 3] = ["c1111", "c2222", "c1212"];

/// One of the three predicted stiffness components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    C1111,
    C2222,
    C1212,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::C1111, Component::C2222, Component::C1212];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        COMPONENT_NAMES[self.index()]
    }
}

impl std::str::FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1111" => Ok(Self::C1111),
            "c2222" => Ok(Self::C2222),
            "c1212" => Ok(Self::C1212),
            _ => Err(Error::invalid(format!("unknown component `{s}` (expected c1111, c2222 or c1212)"))),
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic shuffle, then the first `floor(0.8 n)` records train.
///
/// Records are tagged `train` / `val` in the returned manifests.
pub fn split_80_20(manifest: &DatasetManifest, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if let Some(r) = manifest.records.iter().find(|r| r.label().is_none()) {
        return Err(Error::invalid(format!("record `{}` is unlabeled", r.id)));
    }
    if manifest.len() < 5 {
        return Err(Error::invalid(format!("need at least 5 labeled records, got {}", manifest.len())));
    }
    let (train, val) = split_indices(manifest.len(), seed);
    let pick = |idx: &[usize], tag: &str| {
        let recs = idx
            .iter()
            .map(|&i| {
                let mut r = manifest.records[i].clone();
                r.split = tag.into();
                r
            })
            .collect();
        manifest.with_records(recs)
    };
    Ok((pick(&train, "train"), pick(&val, "val")))
}

/// Seeded shuffle of `0..n` cut into the first `floor(0.8 n)` and the rest.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = order.split_off(n * 4 / 5);
    (order, val)
}

/// Token matrices with their stiffness labels in GPa.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub tokens: Vec<Tensor>,
    pub targets: Vec<[f64; 3]>,
}

impl LabeledSet {
    pub fn from_manifest(manifest: &DatasetManifest, cfg: &MmaeConfig) -> Result<Self> {
        let mut set = Self { ids: Vec::new(), tokens: Vec::new(), targets: Vec::new() };
        for r in &manifest.records {
            let label = r
                .label()
                .ok_or_else(|| Error::invalid(format!("record `{}` is unlabeled", r.id)))?;
            set.ids.push(r.id.clone());
            set.tokens.push(patchify(&manifest.load_image(r)?, cfg)?);
            set.targets.push(label);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            tokens: idx.iter().map(|&i| self.tokens[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// Per-component z-scoring fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl TargetScaler {
    pub fn fit(targets: &[[f64; 3]]) -> Result<Self> {
        if targets.len() < 2 {
            return Err(Error::invalid("need at least 2 targets to standardize"));
        }
        let n = targets.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = targets.iter().map(|t| t[c]).sum::<f64>() / n;
            let var = targets.iter().map(|t| (t[c] - mean[c]).powi(2)).sum::<f64>() / n;
            if !(var > 1e-24 * mean[c].abs().max(1.0).powi(2)) {
                return Err(Error::DegenerateTarget(COMPONENT_NAMES[c]));
            }
            std[c] = var.sqrt();
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, t: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| (t[c] - self.mean[c]) / self.std[c])
    }

    pub fn inverse(&self, z: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| z[c] * self.std[c] + self.mean[c])
    }
}

/// Coefficient of determination per component and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2 {
    pub components: [f64; 3],
    pub average: f64,
}

/// `1 − SS_res / SS_tot` for one series, `SS_tot` about the target mean.
pub fn r2_single(preds: &[f64], targets: &[f64], name: &'static str) -> Result<f64> {
    if preds.len() != targets.len() || targets.len() < 2 {
        return Err(Error::invalid(format!(
            "R² needs at least 2 paired samples, got {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTarget(name));
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn r2_score(preds: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<R2> {
    let mut components = [0.0; 3];
    for c in 0..3 {
        let p: Vec<f64> = preds.iter().map(|x| x[c]).collect();
        let t: Vec<f64> = targets.iter().map(|x| x[c]).collect();
        components[c] = r2_single(&p, &t, COMPONENT_NAMES[c])?;
    }
    Ok(R2 { components, average: components.iter().sum::<f64>() / 3.0 })
}
