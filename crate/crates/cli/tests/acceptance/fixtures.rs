//! Desk-scale datasets, labels and a pre-trained checkpoint, built once and
//! cached under the cargo target directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use microforge_core::homogenize::{label_dataset, LabelMeta};
use microforge_core::microgen::{derive_seed, generate_dataset, CompositeKind, DatasetManifest, GenConfig, MANIFEST_FILE};
use microforge_core::mmae::{pretrain, Checkpoint, MmaeConfig, PretrainConfig};
use microforge_core::Result;
use serde_json::json;

pub const SEED: u64 = 2024;
pub const RES: usize = 64;
pub const PRETRAIN_IMAGES: usize = 2000;
pub const HELD_OUT: usize = 50;
pub const LABELED_FIBER: usize = 2000;
pub const LABELED_CIRCLE: usize = 500;
/// Bump when generator, solver or trainer output changes.
const FIXTURE_VERSION: u32 = 1;

pub struct Fixtures {
    pub dir: PathBuf,
}

fn cache_root() -> PathBuf {
    std::env::var_os("MICROFORGE_ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache"))
}

fn key() -> serde_json::Value {
    json!({
        "version": FIXTURE_VERSION,
        "crate": env!("CARGO_PKG_VERSION"),
        "seed": SEED,
        "res": RES,
        "sets": [PRETRAIN_IMAGES, HELD_OUT, LABELED_FIBER, LABELED_CIRCLE],
        "gen": GenConfig::default(),
        "model": MmaeConfig::desk(),
        "train": PretrainConfig::default(),
        "solver": LabelMeta::default(),
    })
}

fn step<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    eprintln!("  fixture: {what} ...");
    let out = f()?;
    eprintln!("  fixture: {what} done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(out)
}

impl Fixtures {
    pub fn manifest(&self, set: &str) -> Result<DatasetManifest> {
        DatasetManifest::read(&self.dir.join(set).join(MANIFEST_FILE))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::load(&self.dir.join("pretrained.ckpt"))
    }

    /// Builds whatever is missing; a key mismatch rebuilds everything.
    pub fn load_or_build() -> Result<Self> {
        let dir = cache_root();
        let key_path = dir.join("key.json");
        let key = key();
        let fresh = std::fs::read_to_string(&key_path)
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .is_some_and(|k| k == key);
        if !fresh {
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            std::fs::create_dir_all(&dir)?;
            std::fs::write(&key_path, serde_json::to_string_pretty(&key)?)?;
        }
        let fx = Self { dir };
        let g = GenConfig::default();
        for (set, kind, n, stream) in [
            ("pretrain", CompositeKind::Fiber, PRETRAIN_IMAGES, 1),
            ("heldout", CompositeKind::Fiber, HELD_OUT, 2),
            ("fiber", CompositeKind::Fiber, LABELED_FIBER, 3),
            ("circle", CompositeKind::Circle, LABELED_CIRCLE, 4),
        ] {
            let out_dir = fx.dir.join(set);
            if !out_dir.join(MANIFEST_FILE).exists() {
                step(&format!("generate {n} {kind} images"), || {
                    generate_dataset(kind, n, RES, derive_seed(SEED, stream), &g, &out_dir)
                })?;
            }
        }
        for set in ["fiber", "circle"] {
            let path = fx.dir.join(set).join(MANIFEST_FILE);
            if LabelMeta::read_beside(&path).is_err() {
                let m = DatasetManifest::read(&path)?;
                let meta = LabelMeta::default();
                let out = step(&format!("label {} {set} images", m.len()), || label_dataset(&m, &meta))?;
                for (id, e) in &out.failures {
                    eprintln!("  fixture: {id} unlabeled: {e}");
                }
                out.manifest.write(&path)?;
                meta.write_beside(&path)?;
            }
        }
        let ckpt = fx.dir.join("pretrained.ckpt");
        if !ckpt.exists() {
            let m = fx.manifest("pretrain")?;
            let out = step("pre-train desk model", || pretrain(&m, &MmaeConfig::desk(), &PretrainConfig::default(), SEED))?;
            out.checkpoint.save(&ckpt)?;
            microforge_core::mmae::write_curve_csv(&fx.dir.join("pretrain_curve.csv"), &out.curve, SEED, "acceptance")?;
        }
        Ok(fx)
    }
}
